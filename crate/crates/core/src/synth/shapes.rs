//! Load shapes, μ-law companded variants and the moving-median filter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SynthError;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadShape {
    pub id: String,
    /// Normalized multipliers in [0, 1].
    pub multipliers: Vec<f64>,
}

impl LoadShape {
    pub fn new(id: impl Into<String>, multipliers: Vec<f64>) -> Result<Self, SynthError> {
        let id = id.into();
        if multipliers.is_empty() {
            return Err(SynthError::InvalidShape(format!("shape `{id}` is empty")));
        }
        if let Some(v) = multipliers.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SynthError::InvalidShape(format!("shape `{id}` has value {v} outside [0, 1]")));
        }
        Ok(Self { id, multipliers })
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// Built-in hourly profiles: `residential`, `commercial`, `industrial`.
    pub fn builtin(kind: &str, len: usize) -> Option<LoadShape> {
        let profile: fn(f64, usize) -> f64 = match kind {
            "residential" => residential,
            "commercial" => commercial,
            "industrial" => industrial,
            _ => return None,
        };
        let raw: Vec<f64> = (0..len)
            .map(|t| {
                let day = t / 24;
                let hour = (t % 24) as f64;
                let season = 1.0 + 0.12 * (2.0 * std::f64::consts::PI * t as f64 / (24.0 * 61.0)).sin();
                profile(hour, day) * season
            })
            .collect();
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        Some(LoadShape {
            id: kind.to_string(),
            multipliers: raw.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect(),
        })
    }
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    // wrapped distance on the 24 h circle
    let d = (hour - center).abs();
    let d = d.min(24.0 - d);
    (-0.5 * (d / width).powi(2)).exp()
}

fn weekend(day: usize) -> bool {
    day % 7 >= 5
}

fn residential(hour: f64, day: usize) -> f64 {
    let base = 0.35 + 0.25 * bump(hour, 7.5, 1.5) + 0.55 * bump(hour, 19.5, 2.5);
    if weekend(day) {
        base * 1.08 + 0.1 * bump(hour, 12.0, 3.0)
    } else {
        base
    }
}

fn commercial(hour: f64, day: usize) -> f64 {
    let open = 1.0 / (1.0 + (-(hour - 8.0) * 1.5).exp()) * (1.0 / (1.0 + ((hour - 18.5) * 1.5).exp()));
    let base = 0.3 + 0.7 * open;
    if weekend(day) {
        0.3 + 0.25 * open
    } else {
        base
    }
}

fn industrial(hour: f64, day: usize) -> f64 {
    let shift = 1.0 / (1.0 + (-(hour - 6.0) * 2.0).exp()) * (1.0 / (1.0 + ((hour - 22.0) * 2.0).exp()));
    let base = 0.55 + 0.45 * shift;
    if weekend(day) {
        base * 0.8
    } else {
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Compress,
    Expand,
}

/// y = ln(1 + μx) / ln(1 + μ)
pub fn mu_compress(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

/// Inverse of [`mu_compress`]: x = ((1 + μ)^y - 1) / μ
pub fn mu_expand(y: f64, mu: f64) -> f64 {
    (y * mu.ln_1p()).exp_m1() / mu
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompandingConfig {
    /// μ per variant, used cyclically.
    pub mu_values: Vec<f64>,
    /// Direction per variant, used cyclically.
    pub directions: Vec<Direction>,
    /// Relative Gaussian jitter applied after companding.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl CompandingConfig {
    /// `count` variants with μ drawn log-uniformly in `[mu_min, mu_max]`,
    /// alternating compress / expand.
    pub fn log_uniform(count: usize, mu_min: f64, mu_max: f64, jitter_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (mu_min.ln(), mu_max.ln());
        let mu_values = (0..count)
            .map(|_| {
                if hi > lo {
                    rng.random_range(lo..hi).exp()
                } else {
                    mu_min
                }
            })
            .collect();
        let directions = (0..count)
            .map(|k| if k % 2 == 0 { Direction::Compress } else { Direction::Expand })
            .collect();
        Self {
            mu_values,
            directions,
            jitter_sigma,
            seed,
        }
    }
}

/// Generates `count` companded variants of `base`.
///
/// Deterministic for a fixed `cfg.seed`; every output value lies in [0, 1].
pub fn mu_law_family(base: &LoadShape, cfg: &CompandingConfig, count: usize) -> Result<Vec<LoadShape>, SynthError> {
    if count == 0 {
        return Err(SynthError::InvalidConfig("variant count must be at least 1".into()));
    }
    if cfg.mu_values.is_empty() || cfg.directions.is_empty() {
        return Err(SynthError::InvalidConfig("μ and direction lists must be non-empty".into()));
    }
    if let Some(mu) = cfg.mu_values.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
        return Err(SynthError::InvalidConfig(format!("μ must be positive, got {mu}")));
    }
    if !(cfg.jitter_sigma >= 0.0) {
        return Err(SynthError::InvalidConfig("jitter_sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mu = cfg.mu_values[k % cfg.mu_values.len()];
        let dir = cfg.directions[k % cfg.directions.len()];
        let multipliers = base
            .multipliers
            .iter()
            .map(|&x| {
                let y = match dir {
                    Direction::Compress => mu_compress(x, mu),
                    Direction::Expand => mu_expand(x, mu),
                };
                let y = if cfg.jitter_sigma > 0.0 {
                    y * (1.0 + cfg.jitter_sigma * noise.sample(&mut rng))
                } else {
                    y
                };
                y.clamp(0.0, 1.0)
            })
            .collect();
        out.push(LoadShape {
            id: format!("{}#{k}", base.id),
            multipliers,
        });
    }
    Ok(out)
}

/// Sliding median with replicate padding; output length equals input length.
pub fn moving_median(series: &[f64], window: usize) -> Result<Vec<f64>, SynthError> {
    if window == 0 || window % 2 == 0 {
        return Err(SynthError::InvalidConfig(format!("median window must be odd and >= 1, got {window}")));
    }
    if series.is_empty() {
        return Err(SynthError::InvalidConfig("median filter needs a non-empty series".into()));
    }
    let half = window / 2;
    let n = series.len();
    let mut buf = vec![0.0; window];
    Ok((0..n)
        .map(|i| {
            for (k, slot) in buf.iter_mut().enumerate() {
                let j = (i + k).saturating_sub(half).min(n - 1);
                *slot = series[j];
            }
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_jitter(mu: f64, dir: Direction) -> CompandingConfig {
        CompandingConfig {
            mu_values: vec![mu],
            directions: vec![dir],
            jitter_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn companding_fixes_endpoints() {
        for mu in [0.5, 1.0, 50.0, 255.0] {
            for dir in [Direction::Compress, Direction::Expand] {
                let base = LoadShape::new("b", vec![0.0, 1.0]).unwrap();
                let v = mu_law_family(&base, &no_jitter(mu, dir), 1).unwrap();
                assert_eq!(v[0].multipliers[0], 0.0);
                assert!((v[0].multipliers[1] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn compress_half_at_mu_255() {
        // ln(128.5) / ln(256)
        let want = 128.5f64.ln() / 256f64.ln();
        assert!((mu_compress(0.5, 255.0) - want).abs() < 1e-15);
        assert!((mu_compress(0.5, 255.0) - 0.8757).abs() < 5e-5);
    }

    #[test]
    fn expand_inverts_compress() {
        for x in [0.0, 0.1, 0.37, 0.9, 1.0] {
            assert!((mu_expand(mu_compress(x, 87.0), 87.0) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_mu_and_count() {
        let base = LoadShape::new("b", vec![0.5]).unwrap();
        assert!(mu_law_family(&base, &no_jitter(0.0, Direction::Compress), 1).is_err());
        assert!(mu_law_family(&base, &no_jitter(-3.0, Direction::Compress), 1).is_err());
        assert!(mu_law_family(&base, &no_jitter(3.0, Direction::Compress), 0).is_err());
    }

    #[test]
    fn family_is_seed_deterministic() {
        let base = LoadShape::builtin("residential", 200).unwrap();
        let cfg = CompandingConfig::log_uniform(6, 1.0, 255.0, 0.01, 42);
        let a = mu_law_family(&base, &cfg, 6).unwrap();
        let b = mu_law_family(&base, &cfg, 6).unwrap();
        assert_eq!(a, b);
        let other = CompandingConfig::log_uniform(6, 1.0, 255.0, 0.01, 43);
        assert_ne!(a, mu_law_family(&base, &other, 6).unwrap());
        assert!(cfg.mu_values.iter().all(|m| (1.0..=255.0).contains(m)));
    }

    #[test]
    fn median_examples() {
        assert_eq!(moving_median(&[5.0; 4], 3).unwrap(), vec![5.0; 4]);
        assert_eq!(moving_median(&[1.0, 9.0, 1.0], 3).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(moving_median(&[1.0, 2.0, 3.0, 4.0], 3).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(moving_median(&[7.0], 3).unwrap(), vec![7.0]);
        assert_eq!(moving_median(&[3.0, 1.0, 2.0], 1).unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(moving_median(&[1.0], 2).is_err());
        assert!(moving_median(&[], 3).is_err());
    }

    #[test]
    fn builtin_shapes_are_normalized() {
        for kind in ["residential", "commercial", "industrial"] {
            let s = LoadShape::builtin(kind, 24 * 14).unwrap();
            assert!(s.multipliers.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.multipliers.iter().any(|v| *v == 1.0));
        }
        assert!(LoadShape::builtin("nope", 10).is_none());
    }

    proptest! {
        #[test]
        fn compress_is_strictly_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, mu in 0.01f64..1000.0) {
            prop_assume!(a < b);
            prop_assert!(mu_compress(a, mu) < mu_compress(b, mu));
            prop_assert!(mu_expand(a, mu) < mu_expand(b, mu));
        }

        #[test]
        fn family_stays_in_unit_interval(seed in 0u64..1000, sigma in 0.0f64..0.5) {
            let base = LoadShape::builtin("commercial", 48).unwrap();
            let cfg = CompandingConfig::log_uniform(4, 1.0, 255.0, sigma, seed);
            for v in mu_law_family(&base, &cfg, 4).unwrap() {
                prop_assert!(v.multipliers.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn median_preserves_length(xs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let m = moving_median(&xs, 3).unwrap();
            prop_assert_eq!(m.len(), xs.len());
        }
    }
}
