use serde::{Deserialize, Serialize};

/// Physical constants of a run. Everything is dimensionless; the defaults are
/// `hbar = G = 1` and `c = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one", rename = "G")]
    pub g: f64,
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Units {
    fn default() -> Self {
        Self { hbar: 1.0, g: 1.0, c: 1.0 }
    }
}

impl Units {
    pub fn new(hbar: f64, g: f64, c: f64) -> Option<Self> {
        let u = Self { hbar, g, c };
        u.is_valid().then_some(u)
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }

    pub fn is_valid(&self) -> bool {
        [self.hbar, self.g, self.c].iter().all(|v| v.is_finite() && *v > 0.0)
    }

    /// Lower bound on `D_C * D_Q` that keeps the blurred evolution positive.
    pub fn positivity_bound(&self) -> f64 {
        0.25 * self.hbar * self.hbar
    }
}
