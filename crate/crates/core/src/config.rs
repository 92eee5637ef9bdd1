//! TOML configurations for experiment runs and synthetic panels.
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgarch::{BekkDiagParams, DccParams, ProxBekkParams};
use crate::model::ModelSpec;
use crate::networks::{read_weight_csv, NetworkOptions, WeightKind, WeightMatrix, DEFAULT_MAX_LAG};
use crate::numerics::{FitOptions, MultiStart};
use crate::simulate::DstarchDgp;
use crate::spatial::{GmmRoute, SpGarchXParams, StEgarchParams, StGarchParams};
use crate::univariate::{Egarch11Params, Garch11Params};

fn default_oos() -> usize {
    252
}
fn default_alpha() -> f64 {
    0.05
}
fn default_k() -> usize {
    5
}
fn default_starts() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_max_lag() -> usize {
    DEFAULT_MAX_LAG
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanModel {
    /// VAR(1) with intercept, estimated on the in-sample rows.
    #[default]
    Var1,
    /// Returns are used as residuals unchanged.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Wide CSV panel.
    pub input: PathBuf,
    /// The input holds prices; returns are their log differences.
    #[serde(default)]
    pub prices: bool,
    #[serde(default)]
    pub mean_model: MeanModel,
    /// Trailing rows forecast out of sample.
    #[serde(default = "default_oos")]
    pub oos_length: usize,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub matrices: Vec<WeightKind>,
    /// Weight CSV used wherever `custom` is listed.
    #[serde(default)]
    pub custom_matrix: Option<PathBuf>,
    /// Granger significance level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Neighbours kept by the NN matrices.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    /// Largest AR order considered for the Piccolo distance.
    #[serde(default = "default_k")]
    pub max_ar: usize,
    #[serde(default)]
    pub corr_on_residuals: bool,
    /// Base seed of the perturbed optimizer starts.
    #[serde(default)]
    pub seed: u64,
    /// Optimizer starts per likelihood fit.
    #[serde(default = "default_starts")]
    pub starts: usize,
    pub output: PathBuf,
    /// Grid cells fitted at once.
    #[serde(default = "default_one")]
    pub parallelism: usize,
    /// Writes wall times into `metrics.csv`; they always go to the manifest.
    #[serde(default)]
    pub timings: bool,
    /// Small-sample correction of the DM statistic.
    #[serde(default)]
    pub harvey: bool,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = message
            .split('`')
            .nth(1)
            .filter(|_| message.contains('`'))
            .unwrap_or("<document>")
            .to_string();
        Error::Config { field, message }
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.input = resolve(base, &cfg.input);
        cfg.output = resolve(base, &cfg.output);
        cfg.custom_matrix = cfg.custom_matrix.map(|p| resolve(base, &p));
        Ok(cfg)
    }

    /// Checks that do not need the panel.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        let spatial = self.models.iter().any(|m| m.model.is_spatial());
        if spatial && self.matrices.is_empty() {
            return Err(Error::config("matrices", "spatial models need at least one weight matrix"));
        }
        for (i, k) in self.matrices.iter().enumerate() {
            if *k == WeightKind::Custom && self.custom_matrix.is_none() {
                return Err(Error::config(format!("matrices[{i}]"), "`custom` needs `custom_matrix`"));
            }
            if self.matrices[..i].contains(k) {
                return Err(Error::config(format!("matrices[{i}]"), format!("`{k}` is listed twice")));
            }
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                return Err(Error::config(format!("models[{i}]"), "duplicate model entry"));
            }
            validate_spec(m, i, self.custom_matrix.is_some())?;
        }
        if self.custom_matrix.is_some() && !self.required_matrices().contains(&WeightKind::Custom) {
            return Err(Error::config("custom_matrix", "given but `custom` is not listed in `matrices` or `w2`"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        for (field, v) in [
            ("k", self.k),
            ("max_lag", self.max_lag),
            ("max_ar", self.max_ar),
            ("starts", self.starts),
            ("parallelism", self.parallelism),
            ("oos_length", self.oos_length),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }

    /// Checks against the residual panel length `t`.
    pub fn validate_length(&self, t: usize) -> Result<()> {
        if 2 * self.oos_length >= t {
            return Err(Error::config(
                "oos_length",
                format!("{} out-of-sample rows need fewer than half of the {t} usable rows", self.oos_length),
            ));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            multistart: MultiStart {
                count: self.starts,
                seed: self.seed,
            },
            ..FitOptions::default()
        }
    }

    pub fn network_options(&self) -> NetworkOptions {
        NetworkOptions {
            alpha: self.alpha,
            k: self.k,
            max_ar: self.max_ar,
            max_lag: self.max_lag,
            corr_on_residuals: self.corr_on_residuals,
            fit: self.fit_options(),
        }
    }

    /// Every matrix kind the grid needs, including STEGARCH `w2` kinds.
    pub fn required_matrices(&self) -> Vec<WeightKind> {
        let mut out = self.matrices.clone();
        for m in &self.models {
            if let Some(k) = m.w2 {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }
}

fn validate_spec(m: &ModelSpec, i: usize, has_custom: bool) -> Result<()> {
    use crate::model::ModelKind::*;
    let field = |name: &str| format!("models[{i}].{name}");
    let label = m.model.label();
    if m.gmm_route != GmmRoute::Auto && m.model != Dstarch {
        return Err(Error::config(field("gmm_route"), format!("does not apply to {label}")));
    }
    if !m.homogeneous && m.model != Stbekk {
        return Err(Error::config(field("homogeneous"), format!("does not apply to {label}")));
    }
    if let Some(k) = m.w2 {
        if m.model != Stegarch {
            return Err(Error::config(field("w2"), format!("does not apply to {label}")));
        }
        if k == WeightKind::Custom && !has_custom {
            return Err(Error::config(field("w2"), "`custom` needs `custom_matrix`"));
        }
    }
    if (m.max_outer.is_some() || m.outer_tol.is_some()) && m.model != Spgarchx {
        let name = if m.max_outer.is_some() { "max_outer" } else { "outer_tol" };
        return Err(Error::config(field(name), format!("does not apply to {label}")));
    }
    if m.max_outer == Some(0) {
        return Err(Error::config(field("max_outer"), "must be positive"));
    }
    if let Some(t) = m.outer_tol {
        if !(t > 0.0) {
            return Err(Error::config(field("outer_tol"), "must be positive"));
        }
    }
    Ok(())
}

/// Synthetic network for simulated panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Each asset linked to its `k` nearest neighbours on a circle.
    Ring { k: usize },
    Complete,
    /// Weight CSV as written by the `weights` command.
    File { path: PathBuf },
}

impl NetworkSpec {
    pub fn build(&self, n: usize) -> Result<WeightMatrix> {
        match self {
            NetworkSpec::Ring { k } => WeightMatrix::ring(n, *k),
            NetworkSpec::Complete => WeightMatrix::complete(n),
            NetworkSpec::File { path } => {
                let w = read_weight_csv(std::fs::File::open(path)?)?;
                if w.n() != n {
                    return Err(Error::config("network", format!("{} holds {} assets, n = {n}", path.display(), w.n())));
                }
                Ok(w)
            }
        }
    }
}

/// Data-generating process and its true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DgpSpec {
    /// Independent GARCH(1,1) assets sharing one parameter set.
    Garch(Garch11Params),
    Egarch(Egarch11Params),
    Dcc(DccParams),
    /// Diagonal BEKK; asymmetric when `g_diag` is given.
    Bekk(BekkDiagParams),
    Proxbekk(ProxBekkParams),
    Dstarch(DstarchDgp),
    Spgarchx(SpGarchXParams),
    Stgarch(StGarchParams),
    Stegarch(StEgarchParams),
}

impl DgpSpec {
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            DgpSpec::Proxbekk(_) | DgpSpec::Dstarch(_) | DgpSpec::Spgarchx(_) | DgpSpec::Stgarch(_) | DgpSpec::Stegarch(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    /// Returns CSV written here.
    pub output: PathBuf,
    /// Required by the spatial processes; `W1 = W2` for STEGARCH.
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    pub dgp: DgpSpec,
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SynthConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output = resolve(base, &cfg.output);
        if let Some(NetworkSpec::File { path }) = &mut cfg.network {
            *path = resolve(base, path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.t < 2 {
            return Err(Error::config("t", "must be at least 2"));
        }
        if self.dgp.is_spatial() && self.network.is_none() {
            return Err(Error::config("network", "spatial processes need a network"));
        }
        let n = self.n;
        let len_ok = match &self.dgp {
            DgpSpec::Garch(_) | DgpSpec::Egarch(_) | DgpSpec::Stgarch(_) | DgpSpec::Stegarch(_) => true,
            DgpSpec::Dcc(p) => p.univariate.len() == n && p.qbar.len() == n * n,
            DgpSpec::Bekk(p) => {
                p.a_diag.len() == n
                    && p.b_diag.len() == n
                    && p.c_lower.len() == n * n
                    && p.g_diag.as_ref().is_none_or(|g| g.len() == n)
            }
            DgpSpec::Proxbekk(p) => {
                let m = p.s1.len();
                (m == 1 || m == n)
                    && [&p.v, &p.alpha0, &p.alpha1, &p.beta0, &p.beta1].iter().all(|v| v.len() == m)
            }
            DgpSpec::Dstarch(p) => p.gamma.len() == n && p.omega.len() == n,
            DgpSpec::Spgarchx(p) => p.n() == n,
        };
        if !len_ok {
            return Err(Error::config("dgp", format!("parameter dimensions do not match n = {n}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    const MINIMAL: &str = r#"
input = "returns.csv"
output = "out"
matrices = ["euclidean", "c_nn"]

[[models]]
model = "dstarch"

[[models]]
model = "dcc"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.oos_length, 252);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.k, 5);
        assert_eq!(c.starts, 3);
        assert_eq!(c.parallelism, 1);
        assert_eq!(c.mean_model, MeanModel::Var1);
        assert_eq!(c.models[0].model, ModelKind::Dstarch);
        assert_eq!(c.matrices, vec![WeightKind::Euclidean, WeightKind::CNn]);
        assert!(!c.timings);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&MINIMAL.replace("output = \"out\"", "output = \"out\"\nalpha = 1.5")), "alpha");
        assert_eq!(field_of(&MINIMAL.replace("matrices = [\"euclidean\", \"c_nn\"]", "")), "matrices");
        assert_eq!(field_of("input = \"a\"\noutput = \"b\"\nmodels = []"), "models");
        assert_eq!(field_of(&MINIMAL.replace("\"c_nn\"", "\"euclidean\"")), "matrices[1]");
        assert_eq!(field_of(&format!("{MINIMAL}w2 = \"corr\"\n")), "models[1].w2");
        assert_eq!(field_of(&MINIMAL.replace("output = \"out\"", "output = \"out\"\nstarts = 0")), "starts");
        assert_eq!(field_of(&MINIMAL.replace("output = \"out\"", "output = \"out\"\nbogus = 1")), "bogus");
    }

    #[test]
    fn custom_kind_and_path_come_together() {
        let with_kind = MINIMAL.replace("\"c_nn\"]", "\"custom\"]");
        assert_eq!(field_of(&with_kind), "matrices[1]");
        let both = format!("custom_matrix = \"w.csv\"\n{with_kind}");
        assert!(ExperimentConfig::from_toml_str(&both).is_ok());
        assert_eq!(field_of(&format!("custom_matrix = \"w.csv\"\n{MINIMAL}")), "custom_matrix");
    }

    #[test]
    fn oos_must_be_below_half_the_sample() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert!(c.validate_length(505).is_ok());
        match c.validate_length(504) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "oos_length"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_spatial_grid_needs_no_matrices() {
        let text = "input = \"a\"\noutput = \"b\"\n[[models]]\nmodel = \"bekk\"\n";
        assert!(ExperimentConfig::from_toml_str(text).is_ok());
    }

    #[test]
    fn stegarch_w2_joins_required_matrices() {
        let text = format!("{MINIMAL}\n[[models]]\nmodel = \"stegarch\"\nw2 = \"spill\"\n");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.required_matrices(), vec![WeightKind::Euclidean, WeightKind::CNn, WeightKind::Spill]);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(c.input, dir.path().join("returns.csv"));
        assert_eq!(c.output, dir.path().join("out"));
    }

    const SYNTH: &str = r#"
n = 4
t = 500
seed = 9
output = "sim.csv"

[network]
kind = "ring"
k = 2

[dgp]
model = "stgarch"
omega = 0.05
a_self = 0.05
a_sp = 0.05
b_self = 0.7
b_sp = 0.1
"#;

    #[test]
    fn synth_config_parses() {
        let c = SynthConfig::from_toml_str(SYNTH).unwrap();
        assert_eq!(c.network, Some(NetworkSpec::Ring { k: 2 }));
        assert!(matches!(c.dgp, DgpSpec::Stgarch(p) if p.b_sp == 0.1));
    }

    #[test]
    fn synth_spatial_needs_network() {
        let text = SYNTH.replace("[network]\nkind = \"ring\"\nk = 2\n", "");
        match SynthConfig::from_toml_str(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "network"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_dimension_mismatch() {
        let text = "n = 3\nt = 100\noutput = \"x.csv\"\n[network]\nkind = \"complete\"\n[dgp]\nmodel = \"dstarch\"\nrho = 0.2\ngamma = [0.1, 0.1]\nomega = [0.0, 0.0]\n";
        match SynthConfig::from_toml_str(text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "dgp"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_network_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = Vec::new();
        WeightMatrix::ring(4, 2).unwrap().write_csv(&mut buf).unwrap();
        std::fs::write(dir.path().join("w.csv"), buf).unwrap();
        let text = SYNTH.replace("kind = \"ring\"\nk = 2", "kind = \"file\"\npath = \"w.csv\"");
        let path = dir.path().join("synth.toml");
        std::fs::write(&path, text).unwrap();
        let c = SynthConfig::from_file(&path).unwrap();
        let w = c.network.as_ref().unwrap().build(4).unwrap();
        assert_eq!(w.w, WeightMatrix::ring(4, 2).unwrap().w);
        assert!(c.network.unwrap().build(5).is_err());
    }

}
