//! Declarative scenario files.
//!
//! One directive per line, `section key=value ...`, `#` starts a comment:
//!
//! ```text
//! sim duration=5 seed=1
//! node n0 n1 n2 n3 n4
//! link from=n0 to=n3 bw=2Mb delay=10ms queue=droptail limit=10
//! agent name=tcp0 src=n0 dst=n4 flow=1 window=20
//! app type=expoo agent=tcp0 pktsize=210 burst=2ms idle=1ms rate=100k start=0.1 stop=4.5
//! record interval=0.1
//! trace file=out.tr
//! ```
//!
//! Rates accept `k` (10^3) and `Mb` (10^6) suffixes, times accept `ms` and
//! `s`; bare numbers are bits/second and seconds.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::ParseError;
use crate::netgraph::{Link, NodeId, QueueState, RedParams, Topology};
use crate::scheduler::Seconds;
use crate::traffic::ExpOnOffConfig;
use crate::transport::DEFAULT_RCV_WINDOW;

pub const DEFAULT_QUEUE_LIMIT: usize = 10;
pub const DEFAULT_DURATION: Seconds = 5.0;
pub const DEFAULT_RECORD_INTERVAL: Seconds = 0.1;
pub const DEFAULT_TRACE_FILE: &str = "out.tr";
pub const DEFAULT_MSS: u32 = 210;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueueSpec {
    DropTail { limit: usize },
    Red { limit: usize, params: RedParams },
}

impl QueueSpec {
    pub fn limit(&self) -> usize {
        match *self {
            QueueSpec::DropTail { limit } | QueueSpec::Red { limit, .. } => limit,
        }
    }

    pub fn build(&self, bandwidth: f64) -> QueueState {
        match *self {
            QueueSpec::DropTail { limit } => QueueState::droptail(limit),
            QueueSpec::Red { limit, params } => QueueState::red(limit, params, bandwidth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    /// bits per second
    pub bandwidth: f64,
    pub delay: Seconds,
    pub queue: QueueSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub flow_id: u32,
    pub window: u32,
    pub mss: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSpec {
    pub agent: String,
    pub config: ExpOnOffConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: Seconds,
    pub seed: u64,
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkSpec>,
    pub agents: Vec<AgentSpec>,
    pub apps: Vec<AppSpec>,
    pub record_interval: Seconds,
    pub trace_file: String,
}

impl Scenario {
    pub fn topology(&self) -> Topology {
        let links = self
            .links
            .iter()
            .map(|l| Link::new(l.from, l.to, l.bandwidth, l.delay, l.queue.build(l.bandwidth)))
            .collect();
        Topology::new(self.nodes.clone(), links)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    /// Renders a scenario file that parses back to an equal value.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sim duration={} seed={}", self.duration, self.seed);
        let names: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "node {}", names.join(" "));
        for l in &self.links {
            let _ = write!(
                s,
                "link from={} to={} bw={} delay={}",
                l.from, l.to, l.bandwidth, l.delay
            );
            match l.queue {
                QueueSpec::DropTail { limit } => {
                    let _ = writeln!(s, " queue=droptail limit={limit}");
                }
                QueueSpec::Red { limit, params: p } => {
                    let _ = writeln!(
                        s,
                        " queue=red limit={limit} minth={} maxth={} wq={} maxp={} meanpkt={}",
                        p.min_th, p.max_th, p.w_q, p.max_p, p.mean_pkt_bytes
                    );
                }
            }
        }
        for a in &self.agents {
            let _ = writeln!(
                s,
                "agent name={} src={} dst={} flow={} window={} mss={}",
                a.name, a.src, a.dst, a.flow_id, a.window, a.mss
            );
        }
        for app in &self.apps {
            let c = &app.config;
            let _ = writeln!(
                s,
                "app type=expoo agent={} pktsize={} burst={} idle={} rate={} start={} stop={}",
                app.agent, c.packet_size, c.burst_time, c.idle_time, c.rate, c.start_at, c.stop_at
            );
        }
        let _ = writeln!(s, "record interval={}", self.record_interval);
        let _ = writeln!(s, "trace file={}", self.trace_file);
        s
    }
}

fn parse_scaled(v: &str, units: &[(&str, f64)]) -> Option<f64> {
    let split = v
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E'))
        .unwrap_or(v.len());
    let (num, suffix) = v.split_at(split);
    let scale = if suffix.is_empty() {
        1.0
    } else {
        units.iter().find(|(u, _)| *u == suffix)?.1
    };
    let x: f64 = num.parse().ok()?;
    x.is_finite().then_some(x * scale)
}

/// Parses a rate: `100k`, `1Mb`, or bare bits/second.
pub fn parse_rate(v: &str) -> Option<f64> {
    parse_scaled(
        v,
        &[
            ("k", 1e3),
            ("K", 1e3),
            ("kb", 1e3),
            ("Kb", 1e3),
            ("M", 1e6),
            ("Mb", 1e6),
            ("G", 1e9),
            ("Gb", 1e9),
            ("b", 1.0),
        ],
    )
}

/// Parses a duration: `2ms`, `0.1s`, `0.1`.
pub fn parse_time(v: &str) -> Option<Seconds> {
    parse_scaled(v, &[("ms", 1e-3), ("us", 1e-6), ("s", 1.0)])
}

fn parse_node(v: &str) -> Option<NodeId> {
    let digits = v.strip_prefix('n')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().map(NodeId)
}

struct Directive<'a> {
    line: usize,
    section: &'a str,
    fields: Vec<(&'a str, &'a str)>,
    used: HashSet<&'a str>,
}

impl<'a> Directive<'a> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.line, msg)
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a str> {
        self.used.insert(key);
        self.fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn required(&mut self, key: &'a str) -> Result<&'a str, ParseError> {
        let section = self.section;
        self.raw(key)
            .ok_or_else(|| self.err(format!("missing {key} in {section}")))
    }

    fn map<T>(&mut self, key: &'a str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ParseError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => f(v)
                .map(Some)
                .ok_or_else(|| self.err(format!("invalid value '{v}' for {key}"))),
        }
    }

    fn map_required<T>(&mut self, key: &'a str, f: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
        let section = self.section;
        self.map(key, f)?
            .ok_or_else(|| self.err(format!("missing {key} in {section}")))
    }

    fn node(&mut self, key: &'a str, known: &HashSet<NodeId>) -> Result<NodeId, ParseError> {
        let v = self.required(key)?;
        match parse_node(v) {
            Some(n) if known.contains(&n) => Ok(n),
            _ => Err(self.err(format!("unknown node {v}"))),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        for (k, _) in &self.fields {
            if !self.used.contains(k) {
                return Err(self.err(format!("unknown key '{k}' in {}", self.section)));
            }
        }
        Ok(())
    }
}

fn positive(x: f64) -> Option<f64> {
    (x > 0.0).then_some(x)
}

/// Parses and validates a scenario. Diagnostics carry the 1-based line number.
pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut duration = None;
    let mut seed = 1u64;
    let mut nodes: Vec<NodeId> = Vec::new();
    let mut known: HashSet<NodeId> = HashSet::new();
    let mut links = Vec::new();
    let mut agents: Vec<(usize, AgentSpec, bool)> = Vec::new();
    let mut apps: Vec<(usize, AppSpec)> = Vec::new();
    let mut record_interval = DEFAULT_RECORD_INTERVAL;
    let mut trace_file = DEFAULT_TRACE_FILE.to_string();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let section = tokens.next().unwrap();
        if section == "node" {
            let mut any = false;
            for name in tokens {
                any = true;
                let id =
                    parse_node(name).ok_or_else(|| ParseError::new(line, format!("invalid node name '{name}'")))?;
                if !known.insert(id) {
                    return Err(ParseError::new(line, format!("duplicate node {name}")));
                }
                nodes.push(id);
            }
            if !any {
                return Err(ParseError::new(line, "node directive needs at least one name"));
            }
            continue;
        }
        let mut fields = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ParseError::new(line, format!("expected key=value, found '{tok}'")))?;
            if fields.iter().any(|(key, _)| *key == k) {
                return Err(ParseError::new(line, format!("duplicate key '{k}'")));
            }
            fields.push((k, v));
        }
        let mut d = Directive {
            line,
            section,
            fields,
            used: HashSet::new(),
        };
        match section {
            "sim" => {
                duration = d.map("duration", |v| parse_time(v).and_then(positive))?.or(duration);
                seed = d.map("seed", |v| v.parse().ok())?.unwrap_or(seed);
            }
            "link" => {
                let from = d.node("from", &known)?;
                let to = d.node("to", &known)?;
                if from == to {
                    return Err(d.err("link endpoints must differ"));
                }
                let bandwidth = d.map_required("bw", |v| parse_rate(v).and_then(positive))?;
                let delay = d.map_required("delay", |v| parse_time(v).filter(|x| *x >= 0.0))?;
                let kind = d.raw("queue").unwrap_or("droptail");
                let limit = d.map("limit", |v| v.parse::<usize>().ok())?;
                let queue = match kind {
                    "droptail" | "DropTail" => {
                        for k in ["minth", "maxth", "wq", "maxp", "meanpkt"] {
                            if d.fields.iter().any(|(key, _)| *key == k) {
                                return Err(d.err(format!("{k} only applies to red queues")));
                            }
                        }
                        QueueSpec::DropTail {
                            limit: limit.unwrap_or(DEFAULT_QUEUE_LIMIT),
                        }
                    }
                    "red" | "RED" => {
                        let def = RedParams::default();
                        let params = RedParams {
                            min_th: d.map("minth", |v| v.parse().ok())?.unwrap_or(def.min_th),
                            max_th: d.map("maxth", |v| v.parse().ok())?.unwrap_or(def.max_th),
                            w_q: d.map("wq", |v| v.parse().ok())?.unwrap_or(def.w_q),
                            max_p: d.map("maxp", |v| v.parse().ok())?.unwrap_or(def.max_p),
                            mean_pkt_bytes: d.map("meanpkt", |v| v.parse().ok())?.unwrap_or(def.mean_pkt_bytes),
                        };
                        let limit = limit.unwrap_or_else(|| (2.0 * params.max_th).ceil() as usize);
                        params.validate(limit).map_err(|m| d.err(m))?;
                        QueueSpec::Red { limit, params }
                    }
                    other => return Err(d.err(format!("unknown queue discipline '{other}'"))),
                };
                links.push(LinkSpec {
                    from,
                    to,
                    bandwidth,
                    delay,
                    queue,
                });
            }
            "agent" => {
                let name = d.required("name")?.to_string();
                if agents.iter().any(|(_, a, _)| a.name == name) {
                    return Err(d.err(format!("duplicate agent {name}")));
                }
                match d.raw("type") {
                    None | Some("tcp") => {}
                    Some(t) => return Err(d.err(format!("unsupported agent type '{t}'"))),
                }
                let src = d.node("src", &known)?;
                let dst = d.node("dst", &known)?;
                if src == dst {
                    return Err(d.err("agent source and sink must differ"));
                }
                let flow_id = d.map_required("flow", |v| v.parse().ok())?;
                if agents.iter().any(|(_, a, _)| a.flow_id == flow_id) {
                    return Err(d.err(format!("duplicate flow id {flow_id}")));
                }
                let window = d
                    .map("window", |v| v.parse().ok().filter(|w: &u32| *w > 0))?
                    .unwrap_or(DEFAULT_RCV_WINDOW);
                let mss = d.map("mss", |v| v.parse().ok().filter(|m: &u32| *m > 0))?;
                agents.push((
                    line,
                    AgentSpec {
                        name,
                        src,
                        dst,
                        flow_id,
                        window,
                        mss: mss.unwrap_or(DEFAULT_MSS),
                    },
                    mss.is_some(),
                ));
            }
            "app" => {
                match d.raw("type") {
                    None | Some("expoo") => {}
                    Some(t) => return Err(d.err(format!("unsupported app type '{t}'"))),
                }
                let agent = d.required("agent")?.to_string();
                if !agents.iter().any(|(_, a, _)| a.name == agent) {
                    return Err(d.err(format!("unknown agent {agent}")));
                }
                let def = ExpOnOffConfig::default();
                let rate_raw = d.raw("rate");
                let rate = match rate_raw {
                    None => def.rate,
                    Some(v) => match parse_rate(v) {
                        Some(r) if r > 0.0 => r,
                        Some(_) => return Err(d.err(format!("rate must be positive (got {v})"))),
                        None => return Err(d.err(format!("invalid value '{v}' for rate"))),
                    },
                };
                let config = ExpOnOffConfig {
                    packet_size: d
                        .map("pktsize", |v| v.parse().ok().filter(|s: &u32| *s > 0))?
                        .unwrap_or(def.packet_size),
                    rate,
                    burst_time: d
                        .map("burst", |v| parse_time(v).and_then(positive))?
                        .unwrap_or(def.burst_time),
                    idle_time: d
                        .map("idle", |v| parse_time(v).filter(|x| *x >= 0.0))?
                        .unwrap_or(def.idle_time),
                    start_at: d.map_required("start", |v| parse_time(v).filter(|x| *x >= 0.0))?,
                    stop_at: d.map_required("stop", parse_time)?,
                };
                config.validate().map_err(|m| d.err(m))?;
                apps.push((line, AppSpec { agent, config }));
            }
            "record" => {
                record_interval = d.map_required("interval", |v| parse_time(v).and_then(positive))?;
            }
            "trace" => {
                let f = d.required("file")?;
                if f.contains('/') || f.contains('\\') {
                    return Err(d.err("trace file must be a plain file name"));
                }
                trace_file = f.to_string();
            }
            other => return Err(ParseError::new(line, format!("unknown section '{other}'"))),
        }
        d.finish()?;
    }

    // An agent without an explicit mss takes its application's packet size.
    for (_, app) in &apps {
        if let Some((_, a, explicit)) = agents.iter_mut().find(|(_, a, _)| a.name == app.agent) {
            if !*explicit {
                a.mss = app.config.packet_size;
                *explicit = true;
            }
        }
    }

    let scenario = Scenario {
        duration: duration.unwrap_or(DEFAULT_DURATION),
        seed,
        nodes,
        links,
        agents: agents.iter().map(|(_, a, _)| a.clone()).collect(),
        apps: apps.iter().map(|(_, a)| a.clone()).collect(),
        record_interval,
        trace_file,
    };

    let topo = scenario.topology();
    let agent_lines: HashMap<&str, usize> = agents.iter().map(|(l, a, _)| (a.name.as_str(), *l)).collect();
    for a in &scenario.agents {
        let line = agent_lines[a.name.as_str()];
        if !topo.has_path(a.src, a.dst) {
            return Err(ParseError::new(line, format!("no path from {} to {}", a.src, a.dst)));
        }
        if !topo.has_path(a.dst, a.src) {
            return Err(ParseError::new(
                line,
                format!("no reverse path from {} to {}", a.dst, a.src),
            ));
        }
    }
    for (line, app) in &apps {
        if app.config.stop_at >= scenario.duration {
            return Err(ParseError::new(
                *line,
                format!(
                    "app stop time {} must be before the simulation end {}",
                    app.config.stop_at, scenario.duration
                ),
            ));
        }
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BASE: &str = "\
sim duration=5 seed=3
node n0 n3 n4
link from=n0 to=n3 bw=2Mb delay=10ms
link from=n3 to=n0 bw=2Mb delay=10ms
link from=n3 to=n4 bw=1Mb delay=20ms
link from=n4 to=n3 bw=1Mb delay=20ms
agent name=tcp0 src=n0 dst=n4 flow=1
";

    fn with(extra: &str) -> Result<Scenario, ParseError> {
        parse_scenario(&format!("{BASE}{extra}"))
    }

    #[test]
    fn expoo_app_line() {
        let s =
            with("app type=expoo agent=tcp0 pktsize=210 burst=2ms idle=1ms rate=100k start=0.1 stop=4.5\n").unwrap();
        let c = &s.apps[0].config;
        assert_eq!(c.packet_size, 210);
        assert_eq!(c.rate, 100_000.0);
        assert_eq!(c.burst_time, 0.002);
        assert_eq!(c.idle_time, 0.001);
        assert_eq!((c.start_at, c.stop_at), (0.1, 4.5));
        assert_eq!(s.agents[0].mss, 210);
        assert_eq!(s.seed, 3);
        assert_eq!(s.links[0].queue, QueueSpec::DropTail { limit: 10 });
    }

    #[test]
    fn unit_suffixes() {
        assert_eq!(parse_rate("1Mb"), Some(1_000_000.0));
        assert_eq!(parse_rate("100k"), Some(100_000.0));
        assert_eq!(parse_rate("64000"), Some(64_000.0));
        assert_eq!(parse_time("10ms"), Some(0.01));
        assert_eq!(parse_time("2s"), Some(2.0));
        assert_eq!(parse_time("0.25"), Some(0.25));
        assert_eq!(parse_rate("1Xb"), None);
        assert_eq!(parse_rate("fast"), None);
    }

    #[test]
    fn unknown_node_names_line() {
        let err = with("link from=n0 to=n9 bw=1Mb delay=1ms\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown node n9 at line 8");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = with("record interval=0.1 color=red\n").unwrap_err();
        assert_eq!(err.line, 8);
        assert!(err.message.contains("unknown key 'color'"));
    }

    #[test]
    fn missing_reverse_path_rejected() {
        let text = BASE.replace("link from=n4 to=n3 bw=1Mb delay=20ms\n", "");
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.line, 6);
        assert!(err.message.contains("no reverse path"), "{err}");
    }

    #[test]
    fn non_positive_rate_rejected() {
        let err = with("app agent=tcp0 rate=0 start=0.1 stop=1\n").unwrap_err();
        assert_eq!(err.line, 8);
        assert!(err.message.contains("rate must be positive"));
        assert!(with("app agent=tcp0 rate=-5k start=0.1 stop=1\n").is_err());
    }

    #[test]
    fn app_must_stop_before_end() {
        let err = with("app agent=tcp0 start=0.1 stop=5\n").unwrap_err();
        assert_eq!(err.line, 8);
    }

    #[test]
    fn unknown_agent_and_section() {
        assert!(with("app agent=tcp9 start=0.1 stop=1\n").is_err());
        assert_eq!(with("bogus x=1\n").unwrap_err().line, 8);
    }

    #[test]
    fn red_link_defaults_and_validation() {
        let s = with("link from=n0 to=n4 bw=1Mb delay=1ms queue=red\n").unwrap();
        match s.links.last().unwrap().queue {
            QueueSpec::Red { limit, params } => {
                assert_eq!(limit, 30);
                assert_eq!(params, RedParams::default());
            }
            q => panic!("{q:?}"),
        }
        assert!(with("link from=n0 to=n4 bw=1Mb delay=1ms queue=red limit=10\n").is_err());
        assert!(with("link from=n0 to=n4 bw=1Mb delay=1ms queue=droptail maxp=0.2\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let s = parse_scenario("# header\n\nnode n0 n1 # two nodes\nsim duration=1\n").unwrap();
        assert_eq!(s.nodes, vec![NodeId(0), NodeId(1)]);
        assert_eq!(s.duration, 1.0);
        assert_eq!(s.trace_file, "out.tr");
    }

    #[test]
    fn explicit_mss_wins() {
        let s =
            with("agent name=tcp1 src=n4 dst=n0 flow=2 mss=500\napp agent=tcp1 pktsize=210 start=0 stop=1\n").unwrap();
        assert_eq!(s.agents[1].mss, 500);
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        (
            1u64..1000,
            1.0f64..20.0,
            prop::collection::vec((1e4f64..1e8, 0.0f64..0.1, 1usize..50, any::<bool>()), 1..4),
            1e3f64..1e7,
            1e-4f64..0.01,
            0.0f64..0.01,
            0.01f64..1.0,
        )
            .prop_map(|(seed, duration, link_params, rate, burst, idle, interval)| {
                let nodes: Vec<NodeId> = (0..=link_params.len() as u32).map(NodeId).collect();
                let mut links = Vec::new();
                for (i, (bw, delay, limit, red)) in link_params.iter().enumerate() {
                    let queue = if *red {
                        QueueSpec::Red {
                            limit: limit + 20,
                            params: RedParams::default(),
                        }
                    } else {
                        QueueSpec::DropTail { limit: *limit }
                    };
                    let (a, b) = (NodeId(i as u32), NodeId(i as u32 + 1));
                    links.push(LinkSpec {
                        from: a,
                        to: b,
                        bandwidth: *bw,
                        delay: *delay,
                        queue,
                    });
                    links.push(LinkSpec {
                        from: b,
                        to: a,
                        bandwidth: *bw,
                        delay: *delay,
                        queue,
                    });
                }
                let last = *nodes.last().unwrap();
                Scenario {
                    duration,
                    seed,
                    agents: vec![AgentSpec {
                        name: "tcp0".into(),
                        src: NodeId(0),
                        dst: last,
                        flow_id: 1,
                        window: 20,
                        mss: 210,
                    }],
                    apps: vec![AppSpec {
                        agent: "tcp0".into(),
                        config: ExpOnOffConfig {
                            packet_size: 210,
                            rate,
                            burst_time: burst,
                            idle_time: idle,
                            start_at: 0.0,
                            stop_at: duration / 2.0,
                        },
                    }],
                    nodes,
                    links,
                    record_interval: interval,
                    trace_file: "out.tr".into(),
                }
            })
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(s in arb_scenario()) {
            let text = s.render();
            let back = parse_scenario(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(back, s);
        }
    }
}
