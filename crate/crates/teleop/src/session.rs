//! Live simulation session driven by an operator command slot.
//!
//! Time is passed in explicitly so the staleness rule can be tested without
//! sleeping.

use std::time::{Duration, Instant};

use vrb_formation::obstacles::ObstacleMap;
use vrb_formation::sim::{Scenario, StateSnapshot, World};
use vrb_formation::vrb::Vec5;
use vrb_formation::SimError;

use crate::protocol::{CommandMessage, RateLimits};

/// Commands older than this are ignored and the formation holds.
pub const COMMAND_TIMEOUT: Duration = Duration::from_millis(500);

/// Newest operator command and its arrival time. The newest command from any
/// client wins.
#[derive(Debug, Clone)]
pub struct CommandSlot {
    limits: RateLimits,
    timeout: Duration,
    latest: Option<(Vec5, Instant)>,
}

impl CommandSlot {
    pub fn new(limits: RateLimits, timeout: Duration) -> Self {
        Self {
            limits,
            timeout,
            latest: None,
        }
    }

    pub fn submit(&mut self, cmd: &CommandMessage, now: Instant) {
        self.latest = Some((self.limits.clamp(&cmd.deta), now));
    }

    /// Clamped command, or zero when nothing arrived within the timeout.
    pub fn effective(&self, now: Instant) -> Vec5 {
        match self.latest {
            Some((deta, at)) if now.saturating_duration_since(at) <= self.timeout => deta,
            _ => Vec5::zeros(),
        }
    }
}

pub struct Session {
    world: World,
    commands: CommandSlot,
    applied: Vec5,
    latest: Option<StateSnapshot>,
}

impl Session {
    pub fn new(
        scenario: Scenario,
        limits: RateLimits,
        timeout: Duration,
    ) -> Result<Self, SimError> {
        Ok(Self {
            world: World::new(scenario)?,
            commands: CommandSlot::new(limits, timeout),
            applied: Vec5::zeros(),
            latest: None,
        })
    }

    pub fn submit(&mut self, cmd: &CommandMessage, now: Instant) {
        self.commands.submit(cmd, now);
    }

    /// Advances one tick with the command in effect at `now`.
    pub fn step(&mut self, now: Instant) -> Result<StateSnapshot, SimError> {
        self.applied = self.commands.effective(now);
        let record = self.world.step(&self.applied)?;
        let snapshot = self.world.snapshot(&record);
        self.latest = Some(snapshot.clone());
        Ok(snapshot)
    }

    /// Operator command used by the most recent tick.
    pub fn applied_command(&self) -> Vec5 {
        self.applied
    }

    pub fn latest(&self) -> Option<&StateSnapshot> {
        self.latest.as_ref()
    }

    pub fn obstacles(&self) -> &ObstacleMap {
        &self.world.scenario().obstacles
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vrb_formation::planner::PlannerConfig;
    use vrb_formation::sim::{BusPolicy, CommandScript, CovarianceSchedule};
    use vrb_formation::vrb::{recenter_base, FormationParams, Vec2};

    fn square() -> Scenario {
        let points = [
            Vec2::new(-1.0, -1.0),
            Vec2::new(1.0, -1.0),
            Vec2::new(-1.0, 1.0),
            Vec2::new(1.0, 1.0),
        ];
        Scenario {
            name: "square".into(),
            base: recenter_base(&points).unwrap(),
            radii: vec![0.25; 4],
            initial: vec![FormationParams::identity(); 4],
            config: PlannerConfig::default(),
            obstacles: ObstacleMap::default(),
            covariance: vec![CovarianceSchedule::zero(); 4],
            commands: CommandScript::default(),
            duration_ticks: 0,
            seed: 7,
            bus: BusPolicy::default(),
        }
    }

    fn cmd(deta: [f64; 5]) -> CommandMessage {
        CommandMessage {
            v: 1,
            deta,
            stamp: 0,
        }
    }

    #[test]
    fn command_expires_after_timeout() {
        let t0 = Instant::now();
        let mut slot = CommandSlot::new(RateLimits::default(), COMMAND_TIMEOUT);
        assert_eq!(slot.effective(t0), Vec5::zeros());
        slot.submit(&cmd([0.0, 0.0, 0.0, 0.5, 0.0]), t0);
        let east = Vec5::from([0.0, 0.0, 0.0, 0.5, 0.0]);
        assert_eq!(slot.effective(t0), east);
        assert_eq!(slot.effective(t0 + Duration::from_millis(500)), east);
        assert_eq!(
            slot.effective(t0 + Duration::from_millis(501)),
            Vec5::zeros()
        );
    }

    #[test]
    fn newest_command_wins_and_is_clamped() {
        let t0 = Instant::now();
        let mut slot = CommandSlot::new(RateLimits::default(), COMMAND_TIMEOUT);
        slot.submit(&cmd([0.0, 0.0, 0.0, 0.5, 0.0]), t0);
        slot.submit(
            &cmd([3.0, 0.0, 0.0, 0.0, -9.0]),
            t0 + Duration::from_millis(10),
        );
        assert_eq!(
            slot.effective(t0 + Duration::from_millis(20)),
            Vec5::from([0.5, 0.0, 0.0, 0.0, -1.0])
        );
    }

    #[test]
    fn no_command_holds_position() {
        let t0 = Instant::now();
        let mut session = Session::new(square(), RateLimits::default(), COMMAND_TIMEOUT).unwrap();
        let first = session.step(t0).unwrap();
        for k in 1..40 {
            let snap = session.step(t0 + Duration::from_millis(50 * k)).unwrap();
            assert_eq!(snap.centroid(), first.centroid());
        }
    }

    #[test]
    fn stale_command_stops_the_formation() {
        let t0 = Instant::now();
        let mut session = Session::new(square(), RateLimits::default(), COMMAND_TIMEOUT).unwrap();
        session.submit(&cmd([0.0, 0.0, 0.0, 0.5, 0.0]), t0);
        let mut now = t0;
        let start = session.step(now).unwrap().centroid();
        for _ in 0..10 {
            now += Duration::from_millis(50);
            session.step(now).unwrap();
        }
        let moved = session.latest().unwrap().centroid();
        assert!(moved[0] > start[0] + 0.02, "{moved:?} vs {start:?}");

        // 550 ms after the only command the slot reports zero.
        now = t0 + Duration::from_millis(550);
        session.step(now).unwrap();
        assert_eq!(session.applied_command(), Vec5::zeros());
    }
}
