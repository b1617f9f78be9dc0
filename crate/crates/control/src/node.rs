//! Node state and command execution.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;
use serde_json::{json, Map, Value};

use sda_core::artifact::{short_hash, sweep_artifact, Artifact, ArtifactMeta};
use sda_core::beamforming::{codebook_angle, Awv, Codebook, BROADSIDE_INDEX, CODEBOOK_SIZE, DEFAULT_DAC_BITS};
use sda_core::channel::{Channel, NodePose};
use sda_core::modem::{bits_to_bytes, bytes_to_bits, IqBuffer, Modem, Modulation, Origin, PpduConfig};
use sda_core::rng::derive_seed;
use sda_core::iqfile;
use sda_core::scenario::{Scenario, SweepScenario};
use sda_core::sweep::{run_sweep_with, Schedule, SweepConfig};

pub const TX_NODE: &str = "tx0";
pub const RX_NODE: &str = "rx0";
pub const GAIN_MIN_DB: f64 = -20.0;
pub const GAIN_MAX_DB: f64 = 20.0;
/// Sweep progress is reported once per this many cells.
pub const PROGRESS_STRIDE: usize = CODEBOOK_SIZE;
const CAPTURE_LABEL: u64 = 0x5258;

pub const COMMANDS: &[&str] =
    &["set_mode", "set_beam", "set_awv", "set_gain", "load_iq", "tx_frame", "rx_capture", "run_sweep", "get_status", "reset"];

/// In-band failure of one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandError {
    pub code: &'static str,
    pub message: String,
}

impl CommandError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        CommandError { code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad_request", message)
    }

    pub fn busy(message: impl Into<String>) -> Self {
        Self::new("busy", message)
    }

    fn out_of_range(message: impl Into<String>) -> Self {
        Self::new("out_of_range", message)
    }

    fn mode_conflict(message: impl Into<String>) -> Self {
        Self::new("mode_conflict", message)
    }

    fn io(message: impl Into<String>) -> Self {
        Self::new("io", message)
    }

    fn simulation(message: impl std::fmt::Display) -> Self {
        Self::new("simulation", message.to_string())
    }
}

type CmdResult = Result<Value, CommandError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tx,
    Rx,
    Idle,
}

impl Mode {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "tx" => Some(Mode::Tx),
            "rx" => Some(Mode::Rx),
            "idle" => Some(Mode::Idle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BeamSetting {
    Codebook { index: u8, angle_deg: f64 },
    Custom { amplitudes: Vec<f64>, phases_deg: Vec<f64> },
}

/// Summary of a sample buffer held by a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IqRef {
    pub source: String,
    pub samples: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeState {
    pub node_id: String,
    pub mode: Mode,
    pub beam: BeamSetting,
    pub active_elements: usize,
    pub gain_db: f64,
    pub loaded_iq: Option<IqRef>,
    pub pending_frame: Option<IqRef>,
    pub pose: NodePose,
    #[serde(skip)]
    awv: Awv,
    #[serde(skip)]
    loaded: Option<Arc<IqBuffer>>,
    #[serde(skip)]
    frame: Option<Arc<IqBuffer>>,
}

impl NodeState {
    fn new(node_id: &str, pose: NodePose, codebook: &Codebook) -> Self {
        let awv = codebook.awv(BROADSIDE_INDEX).expect("broadside beam exists").clone();
        NodeState {
            node_id: node_id.to_string(),
            mode: Mode::Idle,
            beam: BeamSetting::Codebook { index: BROADSIDE_INDEX, angle_deg: 0.0 },
            active_elements: awv.active_elements(),
            gain_db: 0.0,
            loaded_iq: None,
            pending_frame: None,
            pose,
            awv,
            loaded: None,
            frame: None,
        }
    }

    fn status(&self) -> Value {
        serde_json::to_value(self).expect("node state serialises")
    }

    fn set_awv(&mut self, awv: Awv, beam: BeamSetting) {
        self.active_elements = awv.active_elements();
        self.awv = awv;
        self.beam = beam;
    }
}

struct Nodes {
    nodes: BTreeMap<String, NodeState>,
    captures: u64,
    sweeping: bool,
}

impl Nodes {
    fn get_mut(&mut self, id: &str) -> Result<&mut NodeState, CommandError> {
        self.nodes.get_mut(id).ok_or_else(|| CommandError::new("unknown_node", format!("unknown node {id:?}")))
    }

    fn get(&self, id: &str) -> Result<&NodeState, CommandError> {
        self.nodes.get(id).ok_or_else(|| CommandError::new("unknown_node", format!("unknown node {id:?}")))
    }

    fn idle_check(&self) -> Result<(), CommandError> {
        if self.sweeping {
            return Err(CommandError::busy("sweep in progress"));
        }
        Ok(())
    }
}

/// All node state plus the scenario channel, shared by every connection.
pub struct Service {
    scenario_name: String,
    sweep: SweepScenario,
    seed: u64,
    output_dir: PathBuf,
    codebook: Codebook,
    channel: Channel,
    initial: BTreeMap<String, NodeState>,
    state: Mutex<Nodes>,
}

fn gain_scale(buf: &IqBuffer, gain_db: f64) -> IqBuffer {
    let g = 10f64.powf(gain_db / 20.0);
    let samples = buf.samples.iter().map(|s| s * g).collect();
    IqBuffer::new(samples, buf.sample_rate_hz, buf.origin)
}

fn iq_ref(source: &str, buf: &IqBuffer) -> IqRef {
    let bytes = iqfile::encode(buf).unwrap_or_default();
    IqRef { source: source.to_string(), samples: buf.len(), sha256: short_hash(&bytes) }
}

fn arg_str<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, CommandError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CommandError::bad_request(format!("{key} must be a string"))),
        None => Err(CommandError::bad_request(format!("missing argument {key}"))),
    }
}

fn arg_f64(args: &Map<String, Value>, key: &str) -> Result<Option<f64>, CommandError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_f64().filter(|x| x.is_finite()).map(Some).ok_or_else(|| CommandError::bad_request(format!("{key} must be a number"))),
    }
}

fn arg_u64(args: &Map<String, Value>, key: &str) -> Result<Option<u64>, CommandError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| CommandError::bad_request(format!("{key} must be a non-negative integer"))),
    }
}

fn arg_f64_list(args: &Map<String, Value>, key: &str) -> Result<Option<Vec<f64>>, CommandError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| v.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .map(Some)
            .ok_or_else(|| CommandError::bad_request(format!("{key} must be an array of numbers"))),
        Some(_) => Err(CommandError::bad_request(format!("{key} must be an array of numbers"))),
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl Service {
    pub fn new(scenario: &Scenario, seed: u64, output_dir: PathBuf) -> Result<Self, String> {
        let sweep = scenario.sweep().map_err(|e| e.to_string())?.clone();
        let cfg = sweep.to_config(seed).map_err(|e| e.to_string())?;
        let channel = Channel::new(&cfg.channel).map_err(|e| e.to_string())?;
        let codebook = cfg.tx_codebook.clone();
        let initial: BTreeMap<String, NodeState> = [
            (TX_NODE, cfg.channel.tx_pose),
            (RX_NODE, cfg.channel.rx_pose),
        ]
        .into_iter()
        .map(|(id, pose)| (id.to_string(), NodeState::new(id, pose, &codebook)))
        .collect();
        let state = Mutex::new(Nodes { nodes: initial.clone(), captures: 0, sweeping: false });
        Ok(Service { scenario_name: scenario.name.clone(), sweep, seed, output_dir, codebook, channel, initial, state })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scenario_name(&self) -> &str {
        &self.scenario_name
    }

    fn lock(&self) -> MutexGuard<'_, Nodes> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs one command. `progress(done, total)` is called during sweeps.
    pub fn execute(&self, cmd: &str, args: &Map<String, Value>, progress: &(dyn Fn(usize, usize) + Sync)) -> CmdResult {
        match cmd {
            "set_mode" => self.set_mode(args),
            "set_beam" => self.set_beam(args),
            "set_awv" => self.set_awv(args),
            "set_gain" => self.set_gain(args),
            "load_iq" => self.load_iq(args),
            "tx_frame" => self.tx_frame(args),
            "rx_capture" => self.rx_capture(args),
            "run_sweep" => self.run_sweep(args, progress),
            "get_status" => self.get_status(args),
            "reset" => self.reset(),
            other => Err(CommandError::new("unknown_command", format!("unknown command {other:?}"))),
        }
    }

    fn set_mode(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let mode_s = arg_str(args, "mode")?;
        let mode = Mode::parse(mode_s).ok_or_else(|| CommandError::bad_request(format!("mode must be tx, rx or idle, got {mode_s:?}")))?;
        let mut st = self.lock();
        st.get(node)?;
        st.idle_check()?;
        let n = st.get_mut(node)?;
        if mode != Mode::Tx {
            n.frame = None;
            n.pending_frame = None;
        }
        n.mode = mode;
        Ok(json!({ "node": node, "mode": mode }))
    }

    fn set_beam(&self, args: &Map<String, Value>) -> CmdResult {
        let index = match args.get("index") {
            Some(v) => v.as_i64().ok_or_else(|| CommandError::bad_request("index must be an integer"))?,
            None => return Err(CommandError::bad_request("missing argument index")),
        };
        if !(1..=CODEBOOK_SIZE as i64).contains(&index) {
            return Err(CommandError::out_of_range(format!("index out of range 1..{CODEBOOK_SIZE}")));
        }
        let index = index as u8;
        let angle = codebook_angle(index).map_err(CommandError::simulation)?;
        let awv = self.codebook.awv(index).map_err(CommandError::simulation)?.clone();
        let node = arg_str(args, "node")?;
        let mut st = self.lock();
        st.get(node)?;
        st.idle_check()?;
        st.get_mut(node)?.set_awv(awv, BeamSetting::Codebook { index, angle_deg: angle });
        Ok(json!({ "node": node, "index": index, "angle_deg": angle }))
    }

    fn set_awv(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let n = self.codebook.geometry.n_elements();
        let amplitudes = arg_f64_list(args, "amplitudes")?.ok_or_else(|| CommandError::bad_request("missing argument amplitudes"))?;
        let phases_deg = arg_f64_list(args, "phases_deg")?.unwrap_or_else(|| vec![0.0; n]);
        if amplitudes.len() != n || phases_deg.len() != n {
            return Err(CommandError::bad_request(format!("amplitudes and phases_deg need {n} entries each")));
        }
        if let Some(a) = amplitudes.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(CommandError::out_of_range(format!("amplitude {a} out of range 0..1")));
        }
        let pairs: Vec<(f64, f64)> = amplitudes.iter().zip(&phases_deg).map(|(&a, &p)| (a, p.to_radians())).collect();
        let awv = Awv::from_polar(&pairs, DEFAULT_DAC_BITS).map_err(|e| CommandError::out_of_range(e.to_string()))?;
        let active = awv.active_elements();
        let mut st = self.lock();
        st.get(node)?;
        st.idle_check()?;
        st.get_mut(node)?.set_awv(awv, BeamSetting::Custom { amplitudes, phases_deg });
        Ok(json!({ "node": node, "active_elements": active }))
    }

    fn set_gain(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let gain = arg_f64(args, "gain_db")?.ok_or_else(|| CommandError::bad_request("missing argument gain_db"))?;
        if !(GAIN_MIN_DB..=GAIN_MAX_DB).contains(&gain) {
            return Err(CommandError::out_of_range(format!("gain_db out of range {GAIN_MIN_DB}..{GAIN_MAX_DB}")));
        }
        let mut st = self.lock();
        st.get(node)?;
        st.idle_check()?;
        st.get_mut(node)?.gain_db = gain;
        Ok(json!({ "node": node, "gain_db": gain }))
    }

    fn load_iq(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let path = arg_str(args, "path")?;
        self.lock().get(node)?;
        let bytes = std::fs::read(path).map_err(|e| CommandError::io(format!("{path}: {e}")))?;
        let buf = iqfile::decode(&bytes).map_err(|e| CommandError::bad_request(format!("{path}: {e}")))?;
        buf.validate().map_err(|e| CommandError::bad_request(format!("{path}: {e}")))?;
        let r = iq_ref(path, &buf);
        let mut st = self.lock();
        st.idle_check()?;
        let n = st.get_mut(node)?;
        n.loaded = Some(Arc::new(buf));
        n.loaded_iq = Some(r.clone());
        Ok(json!({ "node": node, "loaded_iq": r }))
    }

    fn write_iq(&self, kind: &str, buf: &IqBuffer, config: Value) -> Result<PathBuf, CommandError> {
        let meta = ArtifactMeta::new(kind, self.seed, Some(&self.scenario_name), config);
        let bytes = iqfile::encode(buf).map_err(CommandError::simulation)?;
        let art = Artifact::binary(&meta, bytes, "sdaiq");
        art.sidecar(&meta).write_to(&self.output_dir).map_err(|e| CommandError::io(e.to_string()))?;
        art.write_to(&self.output_dir).map_err(|e| CommandError::io(e.to_string()))
    }

    fn tx_frame(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let payload = match (args.get("payload"), args.get("payload_hex")) {
            (Some(_), Some(_)) => return Err(CommandError::bad_request("give payload or payload_hex, not both")),
            (Some(_), None) => Some(arg_str(args, "payload")?.as_bytes().to_vec()),
            (None, Some(_)) => Some(hex::decode(arg_str(args, "payload_hex")?).map_err(|e| CommandError::bad_request(format!("payload_hex: {e}")))?),
            (None, None) => None,
        };
        let modulation: Modulation = match args.get("modulation") {
            Some(_) => arg_str(args, "modulation")?.parse().map_err(|e: sda_core::modem::ModemError| CommandError::bad_request(e.to_string()))?,
            None => Modulation::Qpsk,
        };
        let (gain_db, loaded) = {
            let st = self.lock();
            let n = st.get(node)?;
            st.idle_check()?;
            if n.mode != Mode::Tx {
                return Err(CommandError::mode_conflict("node not in tx mode"));
            }
            (n.gain_db, n.loaded.clone())
        };
        let (base, source, config) = match payload {
            Some(bytes) => {
                let modem = Modem::new(&PpduConfig::with_modulation(modulation)).map_err(CommandError::simulation)?;
                let (iq, _) = modem.build(&bytes_to_bits(&bytes)).map_err(|e| CommandError::bad_request(e.to_string()))?;
                let cfg = json!({ "node": node, "modulation": modulation.name(), "payload_bytes": bytes.len(), "gain_db": gain_db });
                (iq, "payload".to_string(), cfg)
            }
            None => {
                let iq = loaded.ok_or_else(|| CommandError::bad_request("no payload given and no IQ loaded"))?;
                let src = self.lock().get(node)?.loaded_iq.as_ref().map_or_else(String::new, |r| r.source.clone());
                let cfg = json!({ "node": node, "loaded_iq": src, "gain_db": gain_db });
                ((*iq).clone(), src, cfg)
            }
        };
        let frame = gain_scale(&base, gain_db);
        let path = self.write_iq("tx_frame", &frame, config)?;
        let r = iq_ref(&source, &frame);
        let mut st = self.lock();
        let n = st.get_mut(node)?;
        if n.mode != Mode::Tx {
            return Err(CommandError::mode_conflict("node not in tx mode"));
        }
        n.frame = Some(Arc::new(frame));
        n.pending_frame = Some(r.clone());
        Ok(json!({ "node": node, "samples": r.samples, "sha256": r.sha256, "artifact": path.display().to_string() }))
    }

    fn rx_capture(&self, args: &Map<String, Value>) -> CmdResult {
        let node = arg_str(args, "node")?;
        let (frame, tx_awv, rx_awv, rx_gain, src, capture) = {
            let mut st = self.lock();
            let me = st.get(node)?;
            st.idle_check()?;
            if me.mode != Mode::Rx {
                return Err(CommandError::mode_conflict("node not in rx mode"));
            }
            let src = st
                .nodes
                .values()
                .find(|n| n.node_id != node && n.mode == Mode::Tx && n.frame.is_some())
                .ok_or_else(|| CommandError::mode_conflict("no tx-mode node has a frame to send"))?;
            // The channel is reciprocal: weights go by array position, not by direction.
            let (at_tx, at_rx) = if src.node_id == TX_NODE { (src, me) } else { (me, src) };
            let v = (src.frame.clone().expect("checked above"), at_tx.awv.clone(), at_rx.awv.clone(), me.gain_db, src.node_id.clone(), st.captures);
            st.captures += 1;
            v
        };
        let seed = derive_seed(self.seed, &[CAPTURE_LABEL, capture]);
        let rx = self.channel.propagate_seeded(&frame, &tx_awv, &rx_awv, seed).map_err(CommandError::simulation)?;
        let rx = IqBuffer { origin: Origin::Rx, ..gain_scale(&rx, rx_gain) };
        let modem = Modem::new(&PpduConfig::default()).map_err(CommandError::simulation)?;
        let config = json!({ "node": node, "from": src, "capture": capture, "gain_db": rx_gain });
        let path = self.write_iq("rx_capture", &rx, config)?;
        let mut reply = json!({ "node": node, "from": src, "capture": capture, "samples": rx.len(), "artifact": path.display().to_string() });
        let fields = reply.as_object_mut().expect("object");
        match modem.decode(&rx) {
            Ok(rep) => {
                let ok = rep.payload_ok();
                fields.insert("payload_ok".into(), json!(ok));
                fields.insert("snr_db".into(), json!(round2(rep.snr_db)));
                fields.insert("evm_db".into(), json!(rep.evm_db.map(round2)));
                fields.insert("modulation".into(), json!(rep.modulation().map(Modulation::name)));
                fields.insert("codewords".into(), json!({ "total": rep.codewords_total, "crc_ok": rep.codewords_crc_ok }));
                if ok {
                    let bytes = bits_to_bytes(&rep.payload_bits);
                    fields.insert("payload_hex".into(), json!(hex::encode(&bytes)));
                    if let Ok(s) = String::from_utf8(bytes) {
                        fields.insert("payload".into(), json!(s));
                    }
                }
            }
            Err(e) => {
                fields.insert("payload_ok".into(), json!(false));
                fields.insert("decode_error".into(), json!(e.to_string()));
            }
        }
        Ok(reply)
    }

    /// The sweep configuration `run_sweep` uses for these arguments.
    pub fn sweep_config(&self, args: &Map<String, Value>) -> Result<SweepConfig, CommandError> {
        let seed = arg_u64(args, "seed")?.unwrap_or(self.seed);
        let mut cfg = self.sweep.to_config(seed).map_err(CommandError::simulation)?;
        if let Some(f) = arg_u64(args, "frames")? {
            if !(1..=16).contains(&f) {
                return Err(CommandError::out_of_range("frames out of range 1..16"));
            }
            cfg.frames_per_position = f as usize;
        }
        Ok(cfg)
    }

    fn run_sweep(&self, args: &Map<String, Value>, progress: &(dyn Fn(usize, usize) + Sync)) -> CmdResult {
        let cfg = self.sweep_config(args)?;
        {
            let mut st = self.lock();
            st.idle_check()?;
            if st.get(TX_NODE)?.mode != Mode::Tx || st.get(RX_NODE)?.mode != Mode::Rx {
                return Err(CommandError::mode_conflict(format!("run_sweep needs {TX_NODE} in tx mode and {RX_NODE} in rx mode")));
            }
            st.sweeping = true;
        }
        struct Clear<'a>(&'a Service);
        impl Drop for Clear<'_> {
            fn drop(&mut self) {
                self.0.lock().sweeping = false;
            }
        }
        let guard = Clear(self);
        let total = CODEBOOK_SIZE * CODEBOOK_SIZE;
        let done = Mutex::new(0usize);
        let tick = |_: usize| {
            let mut d = done.lock().unwrap_or_else(|e| e.into_inner());
            *d += 1;
            if *d % PROGRESS_STRIDE == 0 {
                progress(*d, total);
            }
        };
        let result = run_sweep_with(&cfg, Schedule::Parallel, Some(&tick)).map_err(CommandError::simulation)?;
        let art = sweep_artifact(&self.scenario_name, &cfg, &result);
        let path = art.write_to(&self.output_dir).map_err(|e| CommandError::io(e.to_string()))?;
        drop(guard);

        let (bt, br) = result.best_pair;
        let mut st = self.lock();
        for (id, idx) in [(TX_NODE, bt), (RX_NODE, br)] {
            let awv = self.codebook.awv(idx).map_err(CommandError::simulation)?.clone();
            let angle = codebook_angle(idx).map_err(CommandError::simulation)?;
            st.get_mut(id)?.set_awv(awv, BeamSetting::Codebook { index: idx, angle_deg: angle });
        }
        let mut reply = result.to_json();
        let fields = reply.as_object_mut().expect("object");
        fields.insert("seed".into(), json!(cfg.seed));
        fields.insert("frames_per_position".into(), json!(cfg.frames_per_position));
        fields.insert("artifact".into(), json!(path.display().to_string()));
        Ok(reply)
    }

    fn get_status(&self, args: &Map<String, Value>) -> CmdResult {
        let st = self.lock();
        match args.get("node") {
            Some(_) => Ok(st.get(arg_str(args, "node")?)?.status()),
            None => Ok(json!({
                "scenario": self.scenario_name,
                "seed": self.seed,
                "sweeping": st.sweeping,
                "nodes": st.nodes.values().map(NodeState::status).collect::<Vec<_>>(),
            })),
        }
    }

    fn reset(&self) -> CmdResult {
        let mut st = self.lock();
        st.idle_check()?;
        st.nodes = self.initial.clone();
        st.captures = 0;
        Ok(json!({ "reset": true }))
    }
}
