use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SimError;

/// One uniform component of the follow-up mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformComponent {
    pub weight: f64,
    pub low: f64,
    pub high: f64,
}

/// Mixture of uniforms for follow-up durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureMixture {
    pub components: Vec<UniformComponent>,
}

impl Default for ExposureMixture {
    fn default() -> Self {
        Self {
            components: vec![
                UniformComponent {
                    weight: 0.5,
                    low: 0.6,
                    high: 1.2,
                },
                UniformComponent {
                    weight: 0.5,
                    low: 0.8,
                    high: 1.4,
                },
            ],
        }
    }
}

impl ExposureMixture {
    pub fn mean(&self) -> f64 {
        let w: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components
            .iter()
            .map(|c| c.weight * 0.5 * (c.low + c.high))
            .sum::<f64>()
            / w
    }

    fn to_config(&self) -> String {
        self.components
            .iter()
            .map(|c| format!("{}:{}-{}", c.weight, c.low, c.high))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn parse(s: &str) -> Result<Self, String> {
        let mut components = Vec::new();
        for part in s.split(',') {
            let (w, range) = part
                .split_once(':')
                .ok_or_else(|| format!("expected weight:low-high, got '{part}'"))?;
            let (lo, hi) = range
                .split_once('-')
                .ok_or_else(|| format!("expected low-high, got '{range}'"))?;
            let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
            components.push(UniformComponent {
                weight: num(w)?,
                low: num(lo)?,
                high: num(hi)?,
            });
        }
        Ok(Self { components })
    }

    fn validate(&self) -> Result<(), String> {
        if self.components.is_empty() {
            return Err("exposure mixture has no components".into());
        }
        for c in &self.components {
            if !(c.weight > 0.0 && c.low > 0.0 && c.high > c.low) {
                return Err(format!("invalid exposure component {c:?}"));
            }
        }
        Ok(())
    }
}

/// Baseline and outcome counts coupled by a Gaussian copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    /// Baseline count mean (no exposure scaling).
    pub r_x: f64,
    pub k_x: f64,
    /// Per-arm event rates; the outcome mean is `rate * exposure`.
    pub rates: [f64; 2],
    pub dispersions: [f64; 2],
    /// Target observed correlation between baseline and outcome counts.
    pub rho: f64,
}

/// Zero-inflated NB outcomes with a count and a continuous covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZinbSpec {
    pub pi: f64,
    pub beta0: f64,
    pub beta_trt: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub k: f64,
    /// Mean of the Poisson baseline count.
    pub x_mean: f64,
    /// Whether the normal covariate is generated and used.
    pub continuous_covariate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum OutcomeModel {
    Copula(CopulaSpec),
    Zinb(ZinbSpec),
}

/// Complete parameterization of a two-arm simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: String,
    pub n_per_arm: usize,
    pub outcome: OutcomeModel,
    pub exposure: ExposureMixture,
}

fn copula_case(r_x: f64, k_x: f64, r0: f64, r1: f64, k: f64) -> OutcomeModel {
    OutcomeModel::Copula(CopulaSpec {
        r_x,
        k_x,
        rates: [r0, r1],
        dispersions: [k, k],
        rho: 0.0,
    })
}

fn zinb_case(pi: f64, beta_trt: f64) -> OutcomeModel {
    OutcomeModel::Zinb(ZinbSpec {
        pi,
        beta0: 0.3f64.ln(),
        beta_trt,
        beta1: 1.5f64.ln(),
        beta2: 2.0f64.ln(),
        k: 1.0,
        x_mean: 1.5,
        continuous_covariate: true,
    })
}

/// Preset scenario `case_id` (A to J) with `n` subjects per arm.
pub fn scenario(case_id: &str, n: usize) -> Result<ScenarioSpec, SimError> {
    let outcome = match case_id.to_ascii_uppercase().as_str() {
        "A" => copula_case(0.4, 3.75, 0.7, 0.7, 2.43),
        "B" => copula_case(0.4, 3.75, 0.5, 0.5, 14.0),
        "C" => copula_case(0.4, 3.75, 0.7, 0.5, 2.43),
        "D" => copula_case(3.7, 2.02, 5.6, 5.6, 0.62),
        "E" => copula_case(3.7, 2.02, 5.6, 5.6, 3.01),
        "F" => copula_case(3.7, 2.02, 5.6, 4.7, 0.62),
        "G" => zinb_case(0.6, 0.0),
        "H" => zinb_case(0.3, 0.0),
        "I" => zinb_case(0.6, 0.7f64.ln()),
        "J" => zinb_case(0.3, 0.7f64.ln()),
        _ => return Err(SimError::UnknownCase(case_id.to_string())),
    };
    Ok(ScenarioSpec {
        case_id: case_id.to_ascii_uppercase(),
        n_per_arm: n,
        outcome,
        exposure: ExposureMixture::default(),
    })
}

impl ScenarioSpec {
    /// Sets the target baseline/outcome correlation (copula scenarios only).
    pub fn with_rho(mut self, rho: f64) -> Self {
        if let OutcomeModel::Copula(c) = &mut self.outcome {
            c.rho = rho;
        }
        self
    }

    pub fn rho(&self) -> Option<f64> {
        match &self.outcome {
            OutcomeModel::Copula(c) => Some(c.rho),
            OutcomeModel::Zinb(_) => None,
        }
    }

    /// Population rates per arm.
    pub fn true_rates(&self) -> [f64; 2] {
        match &self.outcome {
            OutcomeModel::Copula(c) => c.rates,
            OutcomeModel::Zinb(z) => {
                let x = (z.x_mean * (z.beta1.exp() - 1.0)).exp();
                let w = if z.continuous_covariate {
                    (0.5 * z.beta2 * z.beta2).exp()
                } else {
                    1.0
                };
                let base = (1.0 - z.pi) * z.beta0.exp() * x * w;
                [base, base * z.beta_trt.exp()]
            }
        }
    }

    /// True rate ratio of arm 1 to arm 0.
    pub fn true_rate_ratio(&self) -> f64 {
        let r = self.true_rates();
        r[1] / r[0]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.n_per_arm < 2 {
            return bad(format!(
                "n per arm must be at least 2, got {}",
                self.n_per_arm
            ));
        }
        self.exposure.validate().map_err(SimError::InvalidSpec)?;
        match &self.outcome {
            OutcomeModel::Copula(c) => {
                if !(c.r_x > 0.0 && c.rates.iter().all(|r| *r > 0.0)) {
                    return bad("rates must be positive".into());
                }
                if !(c.k_x >= 0.0 && c.dispersions.iter().all(|k| *k >= 0.0)) {
                    return bad("dispersions must be nonnegative".into());
                }
                if !(0.0..=0.95).contains(&c.rho) {
                    return bad(format!("rho must lie in [0, 0.95], got {}", c.rho));
                }
            }
            OutcomeModel::Zinb(z) => {
                if !(0.0..1.0).contains(&z.pi) {
                    return bad(format!("pi must lie in [0, 1), got {}", z.pi));
                }
                if !(z.k >= 0.0 && z.x_mean > 0.0) {
                    return bad("k must be nonnegative and x_mean positive".into());
                }
                let finite = [z.beta0, z.beta_trt, z.beta1, z.beta2];
                if finite.iter().any(|b| !b.is_finite()) {
                    return bad("coefficients must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Flat `key = value` rendering readable by [`ScenarioSpec::from_pairs`].
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "case = {}", self.case_id);
        let _ = writeln!(s, "n = {}", self.n_per_arm);
        match &self.outcome {
            OutcomeModel::Copula(c) => {
                let _ = writeln!(s, "model = copula");
                let _ = writeln!(s, "r_x = {}", c.r_x);
                let _ = writeln!(s, "k_x = {}", c.k_x);
                let _ = writeln!(s, "r0 = {}", c.rates[0]);
                let _ = writeln!(s, "r1 = {}", c.rates[1]);
                let _ = writeln!(s, "k0 = {}", c.dispersions[0]);
                let _ = writeln!(s, "k1 = {}", c.dispersions[1]);
                let _ = writeln!(s, "rho = {}", c.rho);
            }
            OutcomeModel::Zinb(z) => {
                let _ = writeln!(s, "model = zinb");
                let _ = writeln!(s, "pi = {}", z.pi);
                let _ = writeln!(s, "beta0 = {}", z.beta0);
                let _ = writeln!(s, "beta_trt = {}", z.beta_trt);
                let _ = writeln!(s, "beta1 = {}", z.beta1);
                let _ = writeln!(s, "beta2 = {}", z.beta2);
                let _ = writeln!(s, "k = {}", z.k);
                let _ = writeln!(s, "x_mean = {}", z.x_mean);
                let _ = writeln!(s, "continuous_covariate = {}", z.continuous_covariate);
            }
        }
        let _ = writeln!(s, "exposure = {}", self.exposure.to_config());
        s
    }

    /// Builds a scenario from key/value pairs. A preset `case` supplies defaults
    /// that the remaining keys override; `case = custom` needs `model` and
    /// every parameter of that model.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, SimError> {
        let get = |k: &str| pairs.get(k).map(|v| v.trim());
        let num = |k: &str| -> Result<Option<f64>, SimError> {
            get(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| SimError::InvalidSpec(format!("{k}: not a number: '{v}'")))
                })
                .transpose()
        };
        let case = get("case").unwrap_or("custom");
        let n = match get("n") {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| SimError::InvalidSpec(format!("n: not a count: '{v}'")))?,
            None => return Err(SimError::InvalidSpec("missing key 'n'".into())),
        };
        let mut spec = if case.eq_ignore_ascii_case("custom") {
            let model = get("model")
                .ok_or_else(|| SimError::InvalidSpec("custom case needs 'model'".into()))?;
            let need = |k: &str| -> Result<f64, SimError> {
                num(k)?.ok_or_else(|| SimError::InvalidSpec(format!("custom case needs '{k}'")))
            };
            let outcome = match model {
                "copula" => OutcomeModel::Copula(CopulaSpec {
                    r_x: need("r_x")?,
                    k_x: need("k_x")?,
                    rates: [need("r0")?, need("r1")?],
                    dispersions: [need("k0")?, need("k1")?],
                    rho: num("rho")?.unwrap_or(0.0),
                }),
                "zinb" => OutcomeModel::Zinb(ZinbSpec {
                    pi: need("pi")?,
                    beta0: need("beta0")?,
                    beta_trt: need("beta_trt")?,
                    beta1: need("beta1")?,
                    beta2: need("beta2")?,
                    k: need("k")?,
                    x_mean: need("x_mean")?,
                    continuous_covariate: true,
                }),
                other => return Err(SimError::InvalidSpec(format!("unknown model '{other}'"))),
            };
            ScenarioSpec {
                case_id: "custom".into(),
                n_per_arm: n,
                outcome,
                exposure: ExposureMixture::default(),
            }
        } else {
            scenario(case, n)?
        };

        for key in pairs.keys() {
            let known = matches!(
                key.as_str(),
                "case" | "n" | "model" | "exposure" | "continuous_covariate"
            );
            let v = num_key_applies(&spec.outcome, key);
            if !known && !v {
                return Err(SimError::InvalidSpec(format!("unknown key '{key}'")));
            }
        }
        match &mut spec.outcome {
            OutcomeModel::Copula(c) => {
                if let Some(v) = num("r_x")? {
                    c.r_x = v;
                }
                if let Some(v) = num("k_x")? {
                    c.k_x = v;
                }
                if let Some(v) = num("r0")? {
                    c.rates[0] = v;
                }
                if let Some(v) = num("r1")? {
                    c.rates[1] = v;
                }
                if let Some(v) = num("k0")? {
                    c.dispersions[0] = v;
                }
                if let Some(v) = num("k1")? {
                    c.dispersions[1] = v;
                }
                if let Some(v) = num("k")? {
                    c.dispersions = [v, v];
                }
                if let Some(v) = num("rho")? {
                    c.rho = v;
                }
            }
            OutcomeModel::Zinb(z) => {
                if let Some(v) = num("pi")? {
                    z.pi = v;
                }
                if let Some(v) = num("beta0")? {
                    z.beta0 = v;
                }
                if let Some(v) = num("beta_trt")? {
                    z.beta_trt = v;
                }
                if let Some(v) = num("beta1")? {
                    z.beta1 = v;
                }
                if let Some(v) = num("beta2")? {
                    z.beta2 = v;
                }
                if let Some(v) = num("k")? {
                    z.k = v;
                }
                if let Some(v) = num("x_mean")? {
                    z.x_mean = v;
                }
                if let Some(v) = get("continuous_covariate") {
                    z.continuous_covariate = v.parse().map_err(|_| {
                        SimError::InvalidSpec(format!("continuous_covariate: '{v}'"))
                    })?;
                }
            }
        }
        if let Some(v) = get("exposure") {
            spec.exposure = ExposureMixture::parse(v).map_err(SimError::InvalidSpec)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Parses the flat config text (see [`parse_config`]).
    pub fn from_config(text: &str) -> Result<Self, SimError> {
        Self::from_pairs(&parse_config(text)?)
    }
}

fn num_key_applies(outcome: &OutcomeModel, key: &str) -> bool {
    match outcome {
        OutcomeModel::Copula(_) => {
            matches!(key, "r_x" | "k_x" | "r0" | "r1" | "k0" | "k1" | "k" | "rho")
        }
        OutcomeModel::Zinb(_) => matches!(
            key,
            "pi" | "beta0" | "beta_trt" | "beta1" | "beta2" | "k" | "x_mean"
        ),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, SimError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SimError::Config {
            line: i + 1,
            message: format!("expected key = value, got '{line}'"),
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(SimError::Config {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(SimError::Config {
                line: i + 1,
                message: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(out)
}
