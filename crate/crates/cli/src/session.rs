//! Live teleoperation sessions: wire frames, per-connection state and the
//! append-only log that replays offline through the shared rollout code.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use latentmap::maps::clamp_action;
use latentmap::reversibility::{distance, rollout_clamped, step_state};
use latentmap::sim::ArmModel;
use latentmap::{ActionMap, ActionModel, ActionSpace, Error, Result};
use serde::{Deserialize, Serialize};

/// One servable checkpoint.
#[derive(Clone, Debug)]
pub struct ModelEntry {
    pub name: String,
    pub model: Arc<ActionModel>,
    pub nu: f64,
}

/// Read-only state shared by every session.
#[derive(Clone, Debug)]
pub struct ModelStore {
    pub entries: Vec<ModelEntry>,
    pub arm: ArmModel,
    /// Initial joint state of every new session.
    pub start: Vec<f64>,
}

impl ModelStore {
    /// Refuses models whose state dimension differs from the arm's, duplicate
    /// names and starts outside the joint limits.
    pub fn new(entries: Vec<ModelEntry>, arm: ArmModel, start: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("no checkpoints to serve".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.model.state_dim() != arm.dof() {
                return Err(Error::Shape(format!(
                    "checkpoint '{}' has state dimension {}, the arm has {} joints",
                    e.name,
                    e.model.state_dim(),
                    arm.dof()
                )));
            }
            if !(e.nu > 0.0) || !e.nu.is_finite() {
                return Err(Error::Config(format!("step size {} for '{}' must be positive", e.nu, e.name)));
            }
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Config(format!("checkpoint name '{}' is used twice", e.name)));
            }
        }
        if start.len() != arm.dof() || !arm.within_limits(&start) {
            return Err(Error::Input("session start state is outside the joint limits".into()));
        }
        Ok(ModelStore { entries, arm, start })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Action { a: Vec<f64> },
    Reset,
    SelectModel { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    /// Sent once when a session opens.
    Hello {
        session: u64,
        models: Vec<String>,
        model: String,
        nu: f64,
        action_space: ActionSpace,
        limits: Vec<(f64, f64)>,
        x: Vec<f64>,
        ee: [f64; 2],
        links: Vec<[f64; 2]>,
    },
    State {
        x: Vec<f64>,
        ee: [f64; 2],
        links: Vec<[f64; 2]>,
        dist_origin: f64,
        step: u64,
        model: String,
        nu: f64,
    },
    Error { message: String },
}

impl ServerFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }
}

/// Session log entry. `Step` records the clamped action actually applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Start { session: u64, model: String, nu: f64, x: Vec<f64> },
    Step { a: Vec<f64>, x: Vec<f64> },
    Reset { x: Vec<f64> },
    Select { model: String, nu: f64 },
}

#[derive(Debug)]
pub struct Session {
    id: u64,
    store: Arc<ModelStore>,
    model: usize,
    x: Vec<f64>,
    step: u64,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn new(id: u64, store: Arc<ModelStore>) -> Self {
        let x = store.start.clone();
        let entry = &store.entries[0];
        let log = vec![LogEntry::Start {
            session: id,
            model: entry.name.clone(),
            nu: entry.nu,
            x: x.clone(),
        }];
        Session { id, store, model: 0, x, step: 0, log }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn origin(&self) -> &[f64] {
        &self.store.start
    }

    pub fn entry(&self) -> &ModelEntry {
        &self.store.entries[self.model]
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn hello(&self) -> ServerFrame {
        let pose = self.pose();
        let e = self.entry();
        ServerFrame::Hello {
            session: self.id,
            models: self.store.names(),
            model: e.name.clone(),
            nu: e.nu,
            action_space: *e.model.action_space(),
            limits: self.store.arm.limits.clone(),
            x: self.x.clone(),
            ee: pose.ee,
            links: pose.points,
        }
    }

    fn pose(&self) -> latentmap::sim::Pose {
        self.store
            .arm
            .forward_kinematics(&self.x)
            .expect("session state always matches the arm")
    }

    pub fn state_frame(&self) -> ServerFrame {
        let pose = self.pose();
        let e = self.entry();
        ServerFrame::State {
            x: self.x.clone(),
            ee: pose.ee,
            links: pose.points,
            dist_origin: distance(&self.x, &self.store.start),
            step: self.step,
            model: e.name.clone(),
            nu: e.nu,
        }
    }

    /// Handles one raw text frame. Anything unparsable yields an error frame
    /// and leaves the session untouched.
    pub fn handle_text(&mut self, text: &str) -> ServerFrame {
        match serde_json::from_str::<ClientFrame>(text) {
            Ok(frame) => self.handle(frame),
            Err(e) => ServerFrame::Error {
                message: format!("malformed frame: {e}"),
            },
        }
    }

    pub fn handle(&mut self, frame: ClientFrame) -> ServerFrame {
        match frame {
            ClientFrame::Action { a } => match self.apply(&a) {
                Ok(()) => self.state_frame(),
                Err(e) => ServerFrame::Error { message: e.to_string() },
            },
            ClientFrame::Reset => {
                self.x = self.store.start.clone();
                self.step = 0;
                self.log.push(LogEntry::Reset { x: self.x.clone() });
                self.state_frame()
            }
            ClientFrame::SelectModel { name } => match self.store.index_of(&name) {
                Some(i) => {
                    self.model = i;
                    let nu = self.entry().nu;
                    self.log.push(LogEntry::Select { model: name, nu });
                    self.state_frame()
                }
                None => ServerFrame::Error {
                    message: format!("unknown model '{name}'"),
                },
            },
        }
    }

    /// Clamps `a` to the model's action space and takes one Euler step
    /// within the joint limits.
    pub fn apply(&mut self, a: &[f64]) -> Result<()> {
        let e = self.entry();
        let space = e.model.action_space();
        if a.len() != space.dim {
            return Err(Error::Shape(format!(
                "action has {} components, model '{}' expects {}",
                a.len(),
                e.name,
                space.dim
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("action components must be finite".into()));
        }
        let a = clamp_action(space, a);
        let next = step_state(
            &e.model.deployed(),
            &self.x,
            &a,
            e.nu,
            Some(&self.store.arm.limits),
            self.step as usize,
        )?;
        self.x = next;
        self.step += 1;
        self.log.push(LogEntry::Step { a, x: self.x.clone() });
        Ok(())
    }
}

/// Recomputes every logged state from the log's actions alone. Runs of steps
/// under one model go through `rollout_clamped` in one call.
pub fn replay(store: &ModelStore, log: &[LogEntry]) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::new();
    let (mut model, mut x) = match log.first() {
        Some(LogEntry::Start { model, x, .. }) => (model.clone(), x.clone()),
        _ => return Err(Error::Input("a session log starts with a start entry".into())),
    };
    states.push(x.clone());
    let mut pending: Vec<Vec<f64>> = Vec::new();
    let flush = |model: &str, x: &mut Vec<f64>, pending: &mut Vec<Vec<f64>>, states: &mut Vec<Vec<f64>>| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let i = store
            .index_of(model)
            .ok_or_else(|| Error::Input(format!("log refers to unknown model '{model}'")))?;
        let e = &store.entries[i];
        let traj = rollout_clamped(&e.model.deployed(), x, pending, e.nu, Some(&store.arm.limits))?;
        states.extend(traj.states[1..].iter().cloned());
        *x = traj.last().to_vec();
        pending.clear();
        Ok(())
    };
    for entry in &log[1..] {
        match entry {
            LogEntry::Step { a, .. } => pending.push(a.clone()),
            LogEntry::Reset { .. } => {
                flush(&model, &mut x, &mut pending, &mut states)?;
                x = store.start.clone();
                states.push(x.clone());
            }
            LogEntry::Select { model: m, .. } => {
                flush(&model, &mut x, &mut pending, &mut states)?;
                model = m.clone();
            }
            LogEntry::Start { .. } => {
                return Err(Error::Input("a session log has exactly one start entry".into()))
            }
        }
    }
    flush(&model, &mut x, &mut pending, &mut states)?;
    Ok(states)
}

/// The states a log records, in the order [`replay`] produces them.
pub fn logged_states(log: &[LogEntry]) -> Vec<Vec<f64>> {
    log.iter()
        .filter_map(|e| match e {
            LogEntry::Start { x, .. } | LogEntry::Step { x, .. } | LogEntry::Reset { x } => Some(x.clone()),
            LogEntry::Select { .. } => None,
        })
        .collect()
}

/// Appends entries as JSON lines.
pub fn append_log(out: &mut impl Write, entries: &[LogEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use latentmap::reversibility::{estimate_bounds, single_step_check, EstimationBudget, Region};
    use latentmap::{Architecture, Family, Normalization};

    fn model(family: Family, state_dim: usize, seed: u64) -> ActionModel {
        let mut arch = Architecture::new(family, state_dim, 2).with_width(8);
        if family == Family::Scn {
            arch.decoder_hidden = vec![8, 8];
            arch.feature_hidden = vec![8];
            arch.features = 8;
        }
        ActionModel::new(arch, Normalization::identity(state_dim), seed).unwrap()
    }

    fn store() -> Arc<ModelStore> {
        let arm = ArmModel::planar5();
        let entries = vec![
            ModelEntry { name: "scn".into(), model: Arc::new(model(Family::Scn, 5, 1)), nu: 0.05 },
            ModelEntry { name: "ae".into(), model: Arc::new(model(Family::Ae, 5, 2)), nu: 0.02 },
        ];
        Arc::new(ModelStore::new(entries, arm.clone(), arm.home()).unwrap())
    }

    fn actions(k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|i| vec![(i as f64 * 0.7).sin() * 1.3, (i as f64 * 0.3).cos()]).collect()
    }

    #[test]
    fn steps_are_the_shared_euler_step() {
        let store = store();
        let mut s = Session::new(1, Arc::clone(&store));
        let acts = actions(40);
        for a in &acts {
            assert!(matches!(s.handle(ClientFrame::Action { a: a.clone() }), ServerFrame::State { .. }));
        }
        let e = &store.entries[0];
        let clamped: Vec<Vec<f64>> = acts.iter().map(|a| clamp_action(e.model.action_space(), a)).collect();
        let traj = rollout_clamped(&e.model.deployed(), &store.start, &clamped, e.nu, Some(&store.arm.limits)).unwrap();
        assert_eq!(s.state(), traj.last());
        let mut x = store.start.clone();
        for (k, a) in clamped.iter().enumerate() {
            x = step_state(&e.model.deployed(), &x, a, e.nu, Some(&store.arm.limits), k).unwrap();
        }
        assert_eq!(s.state(), &x[..]);
    }

    #[test]
    fn zero_action_on_strict_scn_is_a_fixed_point() {
        let mut s = Session::new(1, store());
        s.handle(ClientFrame::Action { a: vec![0.4, -0.2] });
        let before = s.state().to_vec();
        s.handle(ClientFrame::Action { a: vec![0.0, 0.0] });
        assert_eq!(s.state(), &before[..]);
    }

    #[test]
    fn action_then_negation_matches_single_step_check() {
        let store = store();
        let e = &store.entries[0];
        let mut s = Session::new(1, Arc::clone(&store));
        let x0 = s.state().to_vec();
        let a = vec![0.6, -0.5];
        s.handle(ClientFrame::Action { a: a.clone() });
        let step = distance(s.state(), &x0);
        s.handle(ClientFrame::Action { a: vec![-0.6, 0.5] });
        let back = distance(s.state(), &x0);
        let check = single_step_check(&e.model.deployed(), &x0, &a, e.nu).unwrap();
        assert_eq!((back, step), (check.lhs, check.rhs));
        let region = Region::from_limits(&store.arm.limits).unwrap();
        let est = estimate_bounds(&e.model.deployed(), &region, e.model.action_space(), &EstimationBudget::default())
            .unwrap();
        assert!(back <= est.l.value * e.nu * step + 1e-12, "{back} vs {}", est.l.value * e.nu * step);
    }

    #[test]
    fn reset_restores_the_initial_state_exactly() {
        let store = store();
        let mut s = Session::new(1, Arc::clone(&store));
        for a in actions(25) {
            s.handle(ClientFrame::Action { a });
        }
        assert_ne!(s.state(), &store.start[..]);
        match s.handle(ClientFrame::Reset) {
            ServerFrame::State { x, step, dist_origin, .. } => {
                assert_eq!(x, store.start);
                assert_eq!((step, dist_origin), (0, 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_frames_leave_the_session_intact() {
        let mut s = Session::new(1, store());
        s.handle_text(r#"{"type":"action","a":[0.3,0.1]}"#);
        let before = s.state().to_vec();
        let log_len = s.log().len();
        for bad in [
            "not json",
            "{}",
            r#"{"type":"jump"}"#,
            r#"{"type":"action"}"#,
            r#"{"type":"action","a":"up"}"#,
            r#"{"type":"action","a":[1.0]}"#,
            r#"{"type":"action","a":[1.0,2.0,3.0]}"#,
            r#"{"type":"select_model","name":"nope"}"#,
        ] {
            assert!(matches!(s.handle_text(bad), ServerFrame::Error { .. }), "{bad}");
            assert_eq!(s.state(), &before[..]);
            assert_eq!(s.log().len(), log_len);
        }
        assert!(matches!(s.handle_text(r#"{"type":"action","a":[0.3,0.1]}"#), ServerFrame::State { step: 2, .. }));
    }

    #[test]
    fn out_of_range_actions_are_clamped_before_stepping() {
        let store = store();
        let mut big = Session::new(1, Arc::clone(&store));
        let mut clamped = Session::new(2, store);
        big.handle(ClientFrame::Action { a: vec![5.0, 5.0] });
        clamped.handle(ClientFrame::Action { a: vec![1.0, 1.0] });
        assert_eq!(big.state(), clamped.state());
        match &big.log()[1] {
            LogEntry::Step { a, .. } => assert_eq!(a, &vec![1.0, 1.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn states_stay_within_joint_limits() {
        let store = store();
        let mut s = Session::new(1, Arc::clone(&store));
        for _ in 0..400 {
            s.handle(ClientFrame::Action { a: vec![1.0, -1.0] });
            assert!(store.arm.within_limits(s.state()));
        }
    }

    #[test]
    fn mismatched_checkpoints_are_refused() {
        let arm = ArmModel::planar5();
        let entry = ModelEntry { name: "small".into(), model: Arc::new(model(Family::Scn, 4, 1)), nu: 0.1 };
        assert!(matches!(ModelStore::new(vec![entry], arm.clone(), arm.home()), Err(Error::Shape(_))));
        let ok = ModelEntry { name: "a".into(), model: Arc::new(model(Family::Scn, 5, 1)), nu: 0.1 };
        assert!(ModelStore::new(vec![ok.clone(), ok.clone()], arm.clone(), arm.home()).is_err());
        assert!(ModelStore::new(vec![ok], arm.clone(), vec![9.0; 5]).is_err());
        assert!(ModelStore::new(vec![], arm.clone(), arm.home()).is_err());
    }

    #[test]
    fn logs_replay_to_the_same_states() {
        let store = store();
        let mut s = Session::new(7, Arc::clone(&store));
        for (i, a) in actions(60).into_iter().enumerate() {
            s.handle(ClientFrame::Action { a });
            match i {
                15 => drop(s.handle(ClientFrame::SelectModel { name: "ae".into() })),
                30 => drop(s.handle(ClientFrame::Reset)),
                45 => drop(s.handle(ClientFrame::SelectModel { name: "scn".into() })),
                _ => {}
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        append_log(&mut f, &s.log()[..10]).unwrap();
        append_log(&mut f, &s.log()[10..]).unwrap();
        let log = read_log(&path).unwrap();
        assert_eq!(log, s.log());
        let replayed = replay(&store, &log).unwrap();
        assert_eq!(replayed, logged_states(&log));
        assert_eq!(replayed.last().unwrap(), s.state());
    }

    #[test]
    fn wire_format() {
        let f: ClientFrame = serde_json::from_str(r#"{"type":"select_model","name":"x"}"#).unwrap();
        assert_eq!(f, ClientFrame::SelectModel { name: "x".into() });
        assert_eq!(serde_json::from_str::<ClientFrame>(r#"{"type":"reset"}"#).unwrap(), ClientFrame::Reset);
        let s = Session::new(3, store());
        let v: serde_json::Value = serde_json::from_str(&s.state_frame().to_json()).unwrap();
        assert_eq!(v["type"], "state");
        for key in ["x", "ee", "links", "dist_origin", "step"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["links"].as_array().unwrap().len(), 6);
        let text = s.hello().to_json();
        assert!(!text.contains('\n'));
        let back: ServerFrame = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s.hello());
    }
}
