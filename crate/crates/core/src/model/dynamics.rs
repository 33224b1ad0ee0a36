use rand::Rng;

use super::{
    Action, CycleCounters, MeasurementStep, OverheadArg, ProcessConfig, ProcessingStep,
    QualityState, RoughnessUpdate,
};
use crate::error::{Error, Result};
use crate::sampling::{positive_normal, POSITIVE_FLOOR};

fn check_state(state: &QualityState) -> Result<()> {
    if state.is_positive() {
        Ok(())
    } else {
        Err(Error::InvalidState(format!(
            "metrics must be positive, got f={} sigma={}",
            state.shape_f, state.roughness_sigma
        )))
    }
}

/// Apply one processing cycle.
///
/// The regime is chosen from the cycle number `counter + 1`. Shape and
/// roughness are multiplied by their sampled factors; afterwards, if the
/// roughness ended below the step's reset bound, it is replaced by a draw from
/// the reset distribution.
pub fn transition<R: Rng + ?Sized>(
    state: QualityState,
    counters: CycleCounters,
    step: ProcessingStep,
    rng: &mut R,
    config: &ProcessConfig,
) -> Result<(QualityState, f64, CycleCounters)> {
    check_state(&state)?;
    let action = Action::Processing(step);
    config.check_legal(action, &counters)?;
    let model = config.step(step)?;
    let cycle = counters.get(step) + 1;
    let regime = model.regime(cycle).ok_or_else(|| Error::IllegalAction {
        action,
        reason: format!("no regime covers cycle {cycle}"),
    })?;
    let alpha = config.alpha;

    let delta_f = positive_normal(rng, regime.shape.mean, regime.shape.std_scale * alpha);
    let shape_f = state.shape_f * delta_f;
    let mut sigma = match regime.roughness {
        RoughnessUpdate::Unchanged => state.roughness_sigma,
        RoughnessUpdate::Multiply { mean, std_scale } => {
            state.roughness_sigma * positive_normal(rng, mean, std_scale * alpha)
        }
        RoughnessUpdate::Coupled { base } => {
            let g = config
                .mrf_coupling
                .eval(alpha, delta_f, state.shape_f, state.roughness_sigma);
            (state.roughness_sigma * (base - g)).max(POSITIVE_FLOOR)
        }
    };
    if let Some(reset) = model.reset {
        if sigma < reset.bound {
            sigma = positive_normal(rng, reset.mean, reset.std_scale * alpha);
        }
    }
    let duration = regime.duration.minutes(config.area_mm2);
    Ok((
        QualityState::new(shape_f, sigma),
        duration,
        counters.incremented(step),
    ))
}

/// Take a noisy reading of the metric the measurement observes.
pub fn measure<R: Rng + ?Sized>(
    state: &QualityState,
    step: MeasurementStep,
    rng: &mut R,
    config: &ProcessConfig,
) -> Result<(f64, f64)> {
    check_state(state)?;
    let model = config.measurement(step)?;
    let truth = state.metric(model.metric);
    let observation = positive_normal(rng, truth, model.std_scale * config.alpha);
    Ok((observation, measurement_minutes(step, config)?))
}

fn measurement_minutes(step: MeasurementStep, config: &ProcessConfig) -> Result<f64> {
    let model = config.measurement(step)?;
    let arg = match model.overhead_arg {
        OverheadArg::Area => config.area_mm2,
        OverheadArg::SqrtArea => config.area_mm2.sqrt(),
    };
    Ok(model.duration.minutes(config.area_mm2) + config.overhead(step).eval(arg))
}

/// Deterministic duration of `action` given the executed cycles.
pub fn step_duration(action: Action, counters: &CycleCounters, config: &ProcessConfig) -> Result<f64> {
    match action {
        Action::Processing(step) => {
            let model = config.step(step)?;
            if let Some(max) = model.max_cycles {
                if counters.get(step) >= max {
                    return Err(Error::IllegalAction {
                        action,
                        reason: format!("at most {max} cycle(s) allowed"),
                    });
                }
            }
            let cycle = counters.get(step) + 1;
            let regime = model.regime(cycle).ok_or_else(|| Error::IllegalAction {
                action,
                reason: format!("no regime covers cycle {cycle}"),
            })?;
            Ok(regime.duration.minutes(config.area_mm2))
        }
        Action::Measurement(step) => measurement_minutes(step, config),
    }
}

/// Immediate reward: negative duration over the configured time scale.
pub fn reward(duration_min: f64, config: &ProcessConfig) -> f64 {
    -duration_min / config.reward_time_scale_min
}

pub fn in_target(state: &QualityState, config: &ProcessConfig) -> bool {
    state.shape_f <= config.target_shape_nm && state.roughness_sigma <= config.target_roughness_nm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;
    use ProcessingStep::*;

    fn zero_noise() -> ProcessConfig {
        ProcessConfig::table1().with_alpha(0.0)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn ccp1_first_cycle() {
        let mut rng = rng_from_seed(0);
        let (s, d, c) = transition(
            QualityState::new(100.0, 1.0),
            CycleCounters::default(),
            Ccp1,
            &mut rng,
            &zero_noise(),
        )
        .unwrap();
        assert!(close(s.shape_f, 90.0));
        assert!(close(s.roughness_sigma, 1.0));
        assert!(close(d, 660.0));
        assert_eq!(c.ccp1, 1);
    }

    #[test]
    fn mrf_first_cycle() {
        let mut rng = rng_from_seed(0);
        let (s, d, _) = transition(
            QualityState::new(150.0, 2.8),
            CycleCounters::default(),
            Mrf,
            &mut rng,
            &zero_noise(),
        )
        .unwrap();
        assert!(close(s.shape_f, 90.0));
        assert!(close(s.roughness_sigma, 2.786));
        assert!(close(d, 600.0));
    }

    #[test]
    fn mrf_reset_below_bound() {
        let mut rng = rng_from_seed(0);
        let (s, _, _) = transition(
            QualityState::new(50.0, 2.0),
            CycleCounters::default(),
            Mrf,
            &mut rng,
            &zero_noise(),
        )
        .unwrap();
        assert_eq!(s.roughness_sigma, 2.0);
        assert!(close(s.shape_f, 30.0));
    }

    #[test]
    fn ccp3_twice_is_illegal() {
        let mut rng = rng_from_seed(0);
        let used = CycleCounters { ccp3: 1, ..Default::default() };
        let err = transition(QualityState::new(5.0, 0.4), used, Ccp3, &mut rng, &zero_noise())
            .unwrap_err();
        assert!(matches!(err, Error::IllegalAction { .. }));
        assert!(step_duration(Ccp3.into(), &used, &zero_noise()).is_err());
    }

    #[test]
    fn non_positive_state_rejected() {
        let mut rng = rng_from_seed(0);
        let err = transition(
            QualityState::new(0.0, 1.0),
            CycleCounters::default(),
            Ccp1,
            &mut rng,
            &zero_noise(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
        let err = measure(&QualityState::new(1.0, -1.0), MeasurementStep::Sls, &mut rng, &zero_noise())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn measurements_at_zero_noise() {
        let cfg = zero_noise();
        let mut rng = rng_from_seed(0);
        let (o, _) = measure(&QualityState::new(3.0, 1.0), MeasurementStep::Sls, &mut rng, &cfg).unwrap();
        assert_eq!(o, 1.0);
        let (o, d) = measure(&QualityState::new(50.0, 1.0), MeasurementStep::Interferometry, &mut rng, &cfg)
            .unwrap();
        assert_eq!(o, 50.0);
        assert!(close(d, 277.5));
        let small = ProcessConfig { area_mm2: 200.0, ..cfg };
        let (o, d) = measure(&QualityState::new(50.0, 1.0), MeasurementStep::Deflectometry, &mut rng, &small)
            .unwrap();
        assert_eq!(o, 50.0);
        assert!(close(d, 121.0));
    }

    #[test]
    fn durations_by_regime() {
        let cfg = ProcessConfig::table1();
        let c = |ccp1, mrf| CycleCounters { ccp1, mrf, ..Default::default() };
        assert!(close(step_duration(Ccp1.into(), &c(0, 0), &cfg).unwrap(), 660.0));
        assert!(close(step_duration(Ccp1.into(), &c(3, 0), &cfg).unwrap(), 540.0));
        assert!(close(step_duration(Mrf.into(), &c(0, 2), &cfg).unwrap(), 300.0));
    }

    #[test]
    fn overheads_add_to_measurements() {
        let mut cfg = ProcessConfig::table1();
        cfg.overheads.insert(
            MeasurementStep::Interferometry,
            super::super::Affine { constant: 10.0, slope: 1.0 },
        );
        cfg.overheads.insert(
            MeasurementStep::Sls,
            super::super::Affine { constant: 5.0, slope: 0.001 },
        );
        let zero = CycleCounters::default();
        let d = step_duration(MeasurementStep::Interferometry.into(), &zero, &cfg).unwrap();
        assert!(close(d, 277.5 + 10.0 + 7850f64.sqrt()));
        let d = step_duration(MeasurementStep::Sls.into(), &zero, &cfg).unwrap();
        assert!(close(d, 5.0 + 7.85));
    }

    #[test]
    fn mrf_coupling_reduces_roughness() {
        let mut cfg = zero_noise();
        cfg.mrf_coupling.constant = 0.1;
        let mut rng = rng_from_seed(0);
        let (s, _, _) = transition(
            QualityState::new(150.0, 3.0),
            CycleCounters::default(),
            Mrf,
            &mut rng,
            &cfg,
        )
        .unwrap();
        assert!(close(s.roughness_sigma, 3.0 * 0.895));
    }

    #[test]
    fn reward_and_target() {
        let cfg = ProcessConfig::table1();
        assert!(close(reward(660.0, &cfg), -0.66));
        assert!(close(reward(1000.0, &cfg), -1.0));
        assert!(close(reward(277.5, &cfg), -0.2775));
        assert!(in_target(&QualityState::new(13.0, 0.5), &cfg));
        assert!(!in_target(&QualityState::new(13.1, 0.4), &cfg));
        assert!(!in_target(&QualityState::new(12.0, 0.6), &cfg));
    }
}
