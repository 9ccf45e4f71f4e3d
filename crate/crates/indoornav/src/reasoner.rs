//! Text interface to an external reasoner (an LLM behind a prompt template),
//! plus the policy adapter that falls back to the rule policy whenever the
//! reasoner is slow or says something unparseable.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::Duration;

use indoornav_core::decision::{NavCommand, PerceptionBundle, Policy, PolicyConfig, RulePolicy};
use indoornav_core::shield::Direction;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The structured prompt payload. Field names are the ones the reasoner was
/// tuned on; do not rename.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonerInput {
    pub detections: Vec<DetectionEntry>,
    pub response: ResponseBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    #[serde(rename = "Name of the detected object")]
    pub name: String,
    /// Range to the box centre, mm.
    #[serde(rename = "How much further is the object")]
    pub distance: Option<f64>,
    /// Height, width, length in mm.
    pub dimensions: Vec<f64>,
    /// Degrees.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseBlock {
    #[serde(rename = "Context where the detected objects are")]
    pub context: String,
    pub sensor_data: SensorData,
}

/// Adjusted clearances in mm, `None` where the sensor had no valid reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorData {
    #[serde(rename = "Left Clearance")]
    pub left: Option<f64>,
    #[serde(rename = "Right Clearance")]
    pub right: Option<f64>,
    #[serde(rename = "Front Clearance")]
    pub front: Option<f64>,
    #[serde(rename = "Back Clearance")]
    pub back: Option<f64>,
    #[serde(rename = "Up Clearance")]
    pub up: Option<f64>,
    #[serde(rename = "Bottom Clearance")]
    pub bottom: Option<f64>,
}

/// Builds the reasoner payload. Values are passed through unrounded so the
/// document determines the bundle's detections and clearances exactly. IMU
/// data is not part of the template and is left out.
pub fn build_reasoner_input(bundle: &PerceptionBundle) -> ReasonerInput {
    let detections = bundle
        .detections
        .iter()
        .map(|o| {
            let d = &o.box3d.dims;
            let dist = o.box3d.distance();
            DetectionEntry {
                name: o.name.clone(),
                distance: dist.is_finite().then_some(dist),
                dimensions: vec![d.height, d.width, d.length],
                orientation: o.box3d.yaw.to_degrees(),
            }
        })
        .collect();
    let c = |d: Direction| bundle.envelope.get(d);
    ReasonerInput {
        detections,
        response: ResponseBlock {
            context: bundle.vlm_description.clone(),
            sensor_data: SensorData {
                left: c(Direction::Left),
                right: c(Direction::Right),
                front: c(Direction::Front),
                back: c(Direction::Back),
                up: c(Direction::Up),
                bottom: c(Direction::Down),
            },
        },
    }
}

pub fn reasoner_input_json(bundle: &PerceptionBundle) -> String {
    serde_json::to_string(&build_reasoner_input(bundle)).expect("plain data serializes")
}

#[derive(Debug, Deserialize)]
struct OutputEnvelope {
    output: OutputFields,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFields {
    #[serde(alias = "vx_m_s")]
    vx: f64,
    #[serde(alias = "vy_m_s")]
    vy: f64,
    #[serde(alias = "vz_m_s")]
    vz: f64,
    #[serde(alias = "yaw_deg")]
    yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedCommand {
    pub command: NavCommand,
    /// Some value was outside `[-v_max, v_max]` or `[-180, 180]`.
    pub clamped: bool,
}

/// Parses `{"output": {"vx", "vy", "vz", "yaw"}}`. The unit-suffixed names
/// (`vx_m_s` .. `yaw_deg`) are accepted as well. Other top-level keys are
/// ignored; missing or extra output fields are errors.
pub fn parse_reasoner_output(text: &str, v_max: f64) -> Result<ParsedCommand> {
    let env: OutputEnvelope =
        serde_json::from_str(text.trim()).map_err(|e| Error::Reasoner(e.to_string()))?;
    let o = env.output;
    let (command, clamped) = NavCommand::new(o.vx, o.vy, o.vz, o.yaw).clamped(v_max);
    Ok(ParsedCommand { command, clamped })
}

pub fn format_reasoner_output(cmd: &NavCommand) -> String {
    serde_json::json!({"output": {"vx": cmd.vx, "vy": cmd.vy, "vz": cmd.vz, "yaw": cmd.yaw}})
        .to_string()
}

/// Request/response text channel to a reasoner.
pub trait ReasonerClient: Send {
    fn query(&mut self, input: &str, timeout: Duration) -> Result<String>;
}

/// Replies from a fixed script, cycling. Handy for tests and dry runs.
#[derive(Debug, Clone)]
pub struct ScriptedReasoner {
    replies: Vec<String>,
    next: usize,
    pub delay: Duration,
    pub seen: Vec<String>,
}

impl ScriptedReasoner {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            next: 0,
            delay: Duration::ZERO,
            seen: Vec::new(),
        }
    }
}

impl ReasonerClient for ScriptedReasoner {
    fn query(&mut self, input: &str, timeout: Duration) -> Result<String> {
        self.seen.push(input.to_owned());
        if self.delay > timeout {
            thread::sleep(timeout);
            return Err(Error::Timeout(timeout.as_millis() as u64));
        }
        thread::sleep(self.delay);
        if self.replies.is_empty() {
            return Err(Error::Reasoner("script is empty".into()));
        }
        let r = self.replies[self.next % self.replies.len()].clone();
        self.next += 1;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonerConfig {
    /// Program and arguments. The program reads one JSON document per line
    /// on stdin and answers with one line on stdout.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    2000
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(Error::Config("reasoner command is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("reasoner timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        if let Some(prog) = self.command.first_mut() {
            let p = Path::new(prog.as_str());
            if p.is_relative() && p.components().count() > 1 {
                *prog = base.join(p).to_string_lossy().into_owned();
            }
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// A long-lived child process speaking one line per request. A request that
/// times out kills the child; the next request starts a fresh one.
pub struct ProcessReasoner {
    cfg: ReasonerConfig,
    running: Option<Running>,
}

impl ProcessReasoner {
    pub fn new(cfg: ReasonerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, running: None })
    }

    fn spawn(&self) -> Result<Running> {
        let mut child = Command::new(&self.cfg.command[0])
            .args(&self.cfg.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(&self.cfg.command[0], e))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines,
        })
    }

    fn stop(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

impl ReasonerClient for ProcessReasoner {
    fn query(&mut self, input: &str, timeout: Duration) -> Result<String> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let r = self.running.as_mut().expect("just spawned");
        let line = input.replace('\n', " ");
        if let Err(e) = writeln!(r.stdin, "{line}").and_then(|_| r.stdin.flush()) {
            self.stop();
            return Err(Error::Reasoner(format!("reasoner stdin: {e}")));
        }
        match r.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                self.stop();
                Err(Error::Reasoner(format!("reasoner stdout: {e}")))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.stop();
                Err(Error::Timeout(timeout.as_millis() as u64))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                self.stop();
                Err(Error::Reasoner("reasoner exited".into()))
            }
        }
    }
}

impl Drop for ProcessReasoner {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerStats {
    pub queries: usize,
    pub fallbacks: usize,
    pub clamped: usize,
}

/// Asks the reasoner; falls back to the rule policy on timeout, transport
/// failure or a reply that does not parse.
pub struct ReasonerPolicy<C> {
    client: C,
    fallback: RulePolicy,
    timeout: Duration,
    v_max: f64,
    pub stats: ReasonerStats,
    pub last_error: Option<String>,
}

impl<C: ReasonerClient> ReasonerPolicy<C> {
    pub fn new(client: C, policy: PolicyConfig, timeout: Duration) -> Self {
        Self {
            client,
            v_max: policy.v_max,
            fallback: RulePolicy::new(policy),
            timeout,
            stats: ReasonerStats::default(),
            last_error: None,
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }
}

impl<C: ReasonerClient> Policy for ReasonerPolicy<C> {
    fn decide(&mut self, bundle: &PerceptionBundle) -> NavCommand {
        self.stats.queries += 1;
        let input = reasoner_input_json(bundle);
        let reply = self
            .client
            .query(&input, self.timeout)
            .and_then(|text| parse_reasoner_output(&text, self.v_max));
        match reply {
            Ok(p) => {
                self.stats.clamped += p.clamped as usize;
                p.command
            }
            Err(e) => {
                self.stats.fallbacks += 1;
                self.last_error = Some(e.to_string());
                self.fallback.decide(bundle)
            }
        }
    }

    fn reset(&mut self) {
        self.fallback.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indoornav_core::shield::{Envelope, ImuFrame};

    fn bundle() -> PerceptionBundle {
        PerceptionBundle {
            detections: vec![],
            envelope: Envelope {
                adjusted: [3592.0, 1531.0, 1911.0, 1243.0, 1833.0, 1627.0],
                valid: [true, true, true, true, false, true],
                breached: [false; 6],
            },
            imu: ImuFrame::default(),
            vlm_description: String::new(),
            timestamp_ms: 0,
        }
    }

    #[test]
    fn empty_detections_keep_sensor_block() {
        let s = reasoner_input_json(&bundle());
        assert_eq!(
            s,
            r#"{"detections":[],"response":{"Context where the detected objects are":"","sensor_data":{"Left Clearance":1243.0,"Right Clearance":1911.0,"Front Clearance":3592.0,"Back Clearance":1531.0,"Up Clearance":null,"Bottom Clearance":1627.0}}}"#
        );
    }

    #[test]
    fn missing_fields_and_garbage_are_errors() {
        assert!(parse_reasoner_output(r#"{"output":{"vx":9}}"#, 1.0).is_err());
        assert!(parse_reasoner_output("move left", 1.0).is_err());
        assert!(parse_reasoner_output(
            r#"{"output":{"vx":0,"vy":0,"vz":0,"yaw":0,"roll":1}}"#,
            1.0
        )
        .is_err());
    }

    #[test]
    fn out_of_range_values_are_clamped_and_flagged() {
        let p = parse_reasoner_output(r#"{"output":{"vx":5.0,"vy":0,"vz":0,"yaw":0}}"#, 1.0)
            .unwrap();
        assert_eq!(p.command.vx, 1.0);
        assert!(p.clamped);
        let p = parse_reasoner_output(r#"{"output":{"vx":0.2,"vy":0,"vz":0,"yaw":-200}}"#, 1.0)
            .unwrap();
        assert_eq!(p.command.yaw, -180.0);
        assert!(p.clamped);
    }

    #[test]
    fn fallback_on_timeout_and_bad_reply() {
        let mut slow = ScriptedReasoner::new([r#"{"output":{"vx":0,"vy":0,"vz":0,"yaw":0}}"#]);
        slow.delay = Duration::from_millis(50);
        let mut p = ReasonerPolicy::new(slow, PolicyConfig::default(), Duration::from_millis(5));
        let got = p.decide(&bundle());
        let want = RulePolicy::default().decide(&bundle());
        assert_eq!(got, want);
        assert_eq!(p.stats.fallbacks, 1);

        let mut p = ReasonerPolicy::new(
            ScriptedReasoner::new(["nope"]),
            PolicyConfig::default(),
            Duration::from_secs(1),
        );
        p.decide(&bundle());
        assert_eq!(p.stats.fallbacks, 1);
        assert!(p.last_error.is_some());
    }

    #[test]
    fn scripted_reply_is_used() {
        let mut p = ReasonerPolicy::new(
            ScriptedReasoner::new([r#"{"output":{"vx":0.0,"vy":0.5,"vz":0.0,"yaw":-8.02}}"#]),
            PolicyConfig::default(),
            Duration::from_secs(1),
        );
        let cmd = p.decide(&bundle());
        assert_eq!((cmd.vx, cmd.vy, cmd.vz, cmd.yaw), (0.0, 0.5, 0.0, -8.02));
        assert_eq!(p.stats.fallbacks, 0);
        assert!(p.client().seen[0].contains("\"Front Clearance\":3592.0"));
    }

    #[cfg(unix)]
    #[test]
    fn process_reasoner_round_trip_and_timeout() {
        let cfg = ReasonerConfig {
            command: vec![
                "sh".into(),
                "-c".into(),
                r#"while read l; do echo '{"output":{"vx":0.1,"vy":0,"vz":0,"yaw":0}}'; done"#
                    .into(),
            ],
            timeout_ms: 2000,
        };
        let mut r = ProcessReasoner::new(cfg).unwrap();
        let a = r.query("{}", Duration::from_secs(2)).unwrap();
        let b = r.query("{}", Duration::from_secs(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_reasoner_output(&a, 1.0).unwrap().command.vx, 0.1);

        let silent = ReasonerConfig {
            command: vec!["sh".into(), "-c".into(), "sleep 5".into()],
            timeout_ms: 50,
        };
        let mut r = ProcessReasoner::new(silent).unwrap();
        let started = std::time::Instant::now();
        assert!(matches!(
            r.query("{}", Duration::from_millis(50)),
            Err(Error::Timeout(50))
        ));
        assert!(started.elapsed() < Duration::from_secs(2));
    }
}
