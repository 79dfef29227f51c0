//! Fuel-efficient platooning benchmark.
//!
//! Each vehicle's fuel use per kilometre as a function of cruising speed is
//! `a + b/x + c·x + d·x²`. A fleet is drawn by perturbing every parameter of a
//! nominal vehicle independently and uniformly by up to a fixed fraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::{stream_rng, PURPOSE_FLEET};
use crate::search::{minimize_box, SearchSettings};

/// Grid used for the reference optimum.
pub const OPTIMUM_GRID_NODES: usize = 1_000_001;
const MAX_RESAMPLES: usize = 1000;
const UNIMODAL_CHECK_NODES: usize = 10_001;

/// Fuel model coefficients; speed in km/h, consumption in g/veh-km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FuelModel {
    /// Stand-in nominal vehicle shipped with the benchmark. It is not a
    /// calibrated truck model: the coefficients put the unperturbed optimum
    /// at 57 km/h with enough curvature there (about 4 g·h²/km³) for a
    /// penalty of `ρ = 10` to reach consensus within a few dozen iterations.
    pub const NOMINAL: FuelModel = FuelModel { a: 7120.0, b: 232_000.0, c: -14.32, d: 0.752 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let m = Self { a, b, c, d };
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("fuel model coefficients must be finite: {m:?}")));
        }
        Ok(m)
    }

    pub fn fuel(&self, speed: f64) -> f64 {
        self.a + self.b / speed + self.c * speed + self.d * speed * speed
    }

    /// `f''(x) = 2b/x³ + 2d`
    pub fn curvature(&self, speed: f64) -> f64 {
        2.0 * self.b / speed.powi(3) + 2.0 * self.d
    }

    /// Whether the model decreases then increases (either part possibly
    /// empty) along a dense grid of `domain`, i.e. has a single minimum there.
    pub fn has_unique_minimum(&self, domain: &SpeedDomain) -> bool {
        let n = UNIMODAL_CHECK_NODES;
        let mut rising = false;
        let mut prev = self.fuel(domain.lo);
        for j in 1..n {
            let x = crate::search::grid_node(domain.lo, domain.hi, n, j);
            let v = self.fuel(x);
            if !v.is_finite() {
                return false;
            }
            if v > prev {
                rising = true;
            } else if rising && v < prev {
                return false;
            }
            prev = v;
        }
        true
    }
}

impl Objective for FuelModel {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.fuel(x[0])
    }
}

/// Fuel consumption at `speed`; the model is undefined for `speed <= 0`.
pub fn fuel_consumption(m: &FuelModel, speed: f64) -> Result<f64> {
    if speed.is_nan() || speed <= 0.0 {
        return Err(Error::invalid(format!("speed must be > 0 km/h, got {speed}")));
    }
    Ok(m.fuel(speed))
}

/// Speed interval `[lo, hi]` in km/h with `lo > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDomain {
    pub lo: f64,
    pub hi: f64,
}

impl SpeedDomain {
    pub const DEFAULT: SpeedDomain = SpeedDomain { lo: 40.0, hi: 90.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("speed domain must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn to_box(&self) -> BoxDomain {
        BoxDomain::interval(self.lo, self.hi).expect("validated speed domain")
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub nominal: FuelModel,
    pub n_vehicles: usize,
    /// Relative half-width of the uniform perturbation, in `[0, 1)`.
    pub perturbation: f64,
    pub domain: SpeedDomain,
    pub seed: u64,
}

impl FleetConfig {
    /// Seven vehicles, ±20 % around [`FuelModel::NOMINAL`], 40–90 km/h.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            nominal: FuelModel::NOMINAL,
            n_vehicles: 7,
            perturbation: 0.2,
            domain: SpeedDomain::DEFAULT,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(Error::invalid("fleet needs at least one vehicle"));
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return Err(Error::invalid(format!("perturbation must lie in [0, 1), got {}", self.perturbation)));
        }
        SpeedDomain::new(self.domain.lo, self.domain.hi)?;
        FuelModel::new(self.nominal.a, self.nominal.b, self.nominal.c, self.nominal.d)?;
        Ok(())
    }
}

fn perturb<R: Rng + ?Sized>(nominal: f64, p: f64, rng: &mut R) -> f64 {
    let (lo, hi) = ((1.0 - p) * nominal, (1.0 + p) * nominal);
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draw a fleet. Vehicles without a unique minimum on the speed domain are
/// redrawn a bounded number of times.
pub fn sample_fleet(cfg: &FleetConfig) -> Result<Vec<FuelModel>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0, PURPOSE_FLEET);
    let p = cfg.perturbation;
    let n = &cfg.nominal;
    let mut fleet = Vec::with_capacity(cfg.n_vehicles);
    for v in 0..cfg.n_vehicles {
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let m = FuelModel {
                a: perturb(n.a, p, &mut rng),
                b: perturb(n.b, p, &mut rng),
                c: perturb(n.c, p, &mut rng),
                d: perturb(n.d, p, &mut rng),
            };
            if m.has_unique_minimum(&cfg.domain) {
                accepted = Some(m);
                break;
            }
        }
        fleet.push(accepted.ok_or_else(|| {
            Error::numerical(format!(
                "vehicle {v}: no sample with a unique minimum on [{}, {}] after {MAX_RESAMPLES} draws",
                cfg.domain.lo, cfg.domain.hi
            ))
        })?);
    }
    Ok(fleet)
}

/// Minimizer of the summed fuel use over the speed domain, by a 10⁶-node scan
/// refined with golden-section search (resolution well below 1e-4 km/h).
pub fn true_platoon_optimum(models: &[FuelModel], domain: &SpeedDomain) -> Result<(f64, f64)> {
    if models.is_empty() {
        return Err(Error::invalid("no fuel models"));
    }
    let settings = SearchSettings { grid_nodes: OPTIMUM_GRID_NODES, rel_tol: 1e-9, ..SearchSettings::default() };
    let m = minimize_box(
        |x| Ok(models.iter().map(|m| m.fuel(x[0])).sum()),
        &domain.to_box(),
        &settings,
    )?;
    Ok((m.x[0], m.value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuel_examples() {
        let m = FuelModel::new(100.0, 2000.0, -1.0, 0.01).unwrap();
        assert!((fuel_consumption(&m, 60.0).unwrap() - 109.333_333_333_333_33).abs() < 1e-9);
        let flat = FuelModel::new(42.0, 0.0, 0.0, 0.0).unwrap();
        for s in [1.0, 57.0, 300.0] {
            assert_eq!(fuel_consumption(&flat, s).unwrap(), 42.0);
        }
        assert!(fuel_consumption(&m, 0.0).is_err());
        assert!(fuel_consumption(&m, -5.0).is_err());
    }

    #[test]
    fn stationarity_oracle_cube_root() {
        // -b/x² + 2dx = 0  =>  x = (b / 2d)^(1/3)
        let m = FuelModel::new(0.0, 1000.0, 0.0, 0.001).unwrap();
        let expected = 500_000f64.cbrt();
        let dom = SpeedDomain::new(40.0, 120.0).unwrap();
        let (x, _) = true_platoon_optimum(&[m], &dom).unwrap();
        assert!((x - expected).abs() < 1e-4, "{x} vs {expected}");
        assert!((expected - 79.370).abs() < 1e-3);
        let (x2, _) = true_platoon_optimum(&[m, m], &dom).unwrap();
        assert!((x2 - x).abs() < 1e-6);
    }

    #[test]
    fn nominal_optimum_near_57() {
        let (x, _) = true_platoon_optimum(&[FuelModel::NOMINAL], &SpeedDomain::DEFAULT).unwrap();
        assert!((x - 57.0).abs() < 0.05, "{x}");
        assert!(FuelModel::NOMINAL.curvature(57.0) > 3.0);
    }

    #[test]
    fn zero_perturbation_reproduces_nominal() {
        let mut cfg = FleetConfig::benchmark(3);
        cfg.perturbation = 0.0;
        let fleet = sample_fleet(&cfg).unwrap();
        assert!(fleet.iter().all(|m| *m == FuelModel::NOMINAL));
    }

    #[test]
    fn perturbation_bounds_and_determinism() {
        let cfg = FleetConfig::benchmark(17);
        let fleet = sample_fleet(&cfg).unwrap();
        assert_eq!(fleet.len(), 7);
        let n = FuelModel::NOMINAL;
        for m in &fleet {
            for (v, nom) in [(m.a, n.a), (m.b, n.b), (m.c, n.c), (m.d, n.d)] {
                assert!((v - nom).abs() <= 0.2 * nom.abs() * (1.0 + 1e-12), "{v} vs {nom}");
            }
        }
        assert_eq!(fleet, sample_fleet(&cfg).unwrap());
        assert_ne!(fleet, sample_fleet(&FleetConfig::benchmark(18)).unwrap());
    }

    #[test]
    fn fleet_config_validation() {
        let mut cfg = FleetConfig::benchmark(0);
        cfg.perturbation = 1.0;
        assert!(sample_fleet(&cfg).is_err());
        let mut cfg = FleetConfig::benchmark(0);
        cfg.domain = SpeedDomain { lo: 0.0, hi: 90.0 };
        assert!(sample_fleet(&cfg).is_err());
        let mut cfg = FleetConfig::benchmark(0);
        cfg.n_vehicles = 0;
        assert!(sample_fleet(&cfg).is_err());
    }

    #[test]
    fn non_unimodal_nominal_is_rejected() {
        // concave with its maximum at 57: minima at both ends
        let cap = FuelModel { a: 0.0, b: 0.0, c: 114.0, d: -1.0 };
        let mut cfg = FleetConfig::benchmark(0);
        cfg.nominal = cap;
        cfg.perturbation = 0.0;
        assert!(!cap.has_unique_minimum(&cfg.domain));
        assert!(matches!(sample_fleet(&cfg), Err(Error::Numerical(_))));
        let ramp = FuelModel { a: 0.0, b: 0.0, c: 1.0, d: 0.0 };
        assert!(ramp.has_unique_minimum(&cfg.domain));
    }

    #[test]
    fn strict_convexity_of_default_fleet() {
        for seed in 0..20 {
            for m in sample_fleet(&FleetConfig::benchmark(seed)).unwrap() {
                for j in 0..=100 {
                    let x = 40.0 + 0.5 * j as f64;
                    assert!(m.curvature(x) > 0.0);
                }
            }
        }
    }

    #[test]
    fn optimum_between_individual_minimizers() {
        let dom = SpeedDomain::DEFAULT;
        for seed in 0..10 {
            let fleet = sample_fleet(&FleetConfig::benchmark(seed)).unwrap();
            let individual: Vec<f64> = fleet
                .iter()
                .map(|m| true_platoon_optimum(std::slice::from_ref(m), &dom).unwrap().0)
                .collect();
            let lo = individual.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = individual.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (x, f) = true_platoon_optimum(&fleet, &dom).unwrap();
            assert!(x >= lo - 1e-6 && x <= hi + 1e-6, "{x} not in [{lo}, {hi}]");
            // no grid node beats the reported optimum
            for j in 0..=5000 {
                let z = crate::search::grid_node(dom.lo, dom.hi, 5001, j);
                assert!(f <= fleet.iter().map(|m| m.fuel(z)).sum::<f64>());
            }
        }
    }
}
