//! Headless episodes under a force script.

use bpguard_core::executive::{ExecError, ExecState, Executive};
use bpguard_core::regions::RegionKind;
use nalgebra::Vector2;

use crate::config::ScenarioConfig;
use crate::trace::{EpisodeTrace, ForceScript, TraceRow};

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub start: String,
    /// Initial target; the belief may change it.
    pub target: String,
    /// Hard stop (s).
    pub duration: f64,
    /// End once the destination residue set is reached and the script is over.
    pub stop_on_arrival: bool,
    /// Trace rows per second; each tick is recorded when this is at least `1/dt`.
    pub record_rate: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub final_state: ExecState,
    pub arrived: bool,
    /// Largest barrier value of the active pair over all ticks.
    pub max_barrier: f64,
    /// Ticks on which the end effector was inside an obstacle or base region.
    pub obstacle_entries: usize,
    pub breach: Option<ExecError>,
}

pub fn run_episode(
    cfg: &ScenarioConfig,
    ex: &Executive,
    script: &ForceScript,
    opts: &EpisodeOptions,
) -> Result<EpisodeOutcome, ExecError> {
    run_episode_with(cfg, ex, opts, |t, _| script.force_at(t), script.end())
}

/// Episode with an arbitrary force policy `f(t, state)`; `script_end` is the
/// time after which arrival may end the episode.
pub fn run_episode_with(
    cfg: &ScenarioConfig,
    ex: &Executive,
    opts: &EpisodeOptions,
    mut force: impl FnMut(f64, &ExecState) -> Vector2<f64>,
    script_end: f64,
) -> Result<EpisodeOutcome, ExecError> {
    let mut es = ex.start(&opts.start, &opts.target)?;
    let ids: Vec<String> = es.belief.candidates.clone();
    let mut trace = EpisodeTrace::new(es.joint.q.len(), ids);
    let blocked: Vec<_> = cfg
        .regions
        .iter()
        .filter(|r| r.kind != RegionKind::Task)
        .collect();
    let every = ((1.0 / opts.record_rate) / ex.cfg.dt).round().max(1.0) as u64;
    let mut max_barrier = f64::NEG_INFINITY;
    let mut obstacle_entries = 0;
    let mut breach = None;
    let record = |es: &ExecState, trace: &mut EpisodeTrace| -> (f64, bool) {
        let x = ex.model.forward_kinematics(&es.joint.q);
        let barrier = ex.graph.vertices[es.active_pair()].barrier(&es.joint);
        let inside = blocked.iter().any(|r| r.contains(&x));
        if es.ticks.is_multiple_of(every) {
            trace
                .push(TraceRow::capture(es, &x, barrier))
                .expect("ticks advance time");
        }
        (barrier, inside)
    };
    record(&es, &mut trace);
    while es.t < opts.duration - 0.5 * ex.cfg.dt {
        if opts.stop_on_arrival && es.t >= script_end && ex.arrived(&es) {
            break;
        }
        let w = force(es.t, &es);
        match ex.tick(&es, &w) {
            Ok(next) => es = next,
            Err(e @ ExecError::SafetyBreach { .. }) => {
                if let ExecError::SafetyBreach { barrier, .. } = e {
                    max_barrier = max_barrier.max(barrier);
                }
                breach = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        let (b, inside) = record(&es, &mut trace);
        max_barrier = max_barrier.max(b);
        obstacle_entries += inside as usize;
    }
    let arrived = ex.arrived(&es);
    Ok(EpisodeOutcome {
        trace,
        final_state: es,
        arrived,
        max_barrier,
        obstacle_entries,
        breach,
    })
}
