//! Scenario files.
//!
//! Line-oriented sections with `key = value` pairs; `#` starts a comment.
//! See `scenarios/README.md` for the full key reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ids::{FlowId, NodeId, StarId};
use crate::protocol::frame::MIN_DATA_PSDU;
use crate::protocol::{FlowMode, FlowSpec, Load, MacParams};
use crate::schedule::{DEFAULT_INACTIVITY_THRESHOLD, DEFAULT_MAX_GTS_PER_SUPERFRAME, DEFAULT_N_MAX};
use crate::timing::{Micros, PhyParams, SuperframeConfig, DEFAULT_MIN_CAP_SLOTS, DEFAULT_SLOTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arbitration {
    /// The PAN coordinator arbitrates every reservation and beacon slot.
    Pan,
    /// Every coordinator schedules its own star and beacons at slot 0 of
    /// its own, unaligned grid.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarSpec {
    pub id: StarId,
    pub gbs_level: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub star: StarId,
    pub associated: bool,
    /// Dedicated slot provisioned before the node ever transmits.
    pub pds_level: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub pan: NodeId,
    pub mac: MacParams,
    pub arbitration: Arbitration,
    /// Simulated superframes.
    pub duration: u64,
    pub stars: Vec<StarSpec>,
    pub nodes: Vec<NodeSpec>,
    pub flows: Vec<FlowSpec>,
    /// Radio range; `None` means every device hears every other.
    pub range: Option<Vec<(NodeId, NodeId)>>,
    pub interference: Vec<(StarId, StarId)>,
    /// Value of the `contenders` CSV column; defaults to the number of CAP flows.
    pub contenders: Option<u32>,
}

/// Problem found while reading or checking a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", render(.0))]
pub struct ScenarioError(pub Vec<Issue>);

fn render(issues: &[Issue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n")
}

impl Scenario {
    /// A PAN with no stars, nodes or flows.
    pub fn new(name: &str, sf: SuperframeConfig, phy: PhyParams) -> Self {
        Scenario {
            name: name.to_string(),
            pan: NodeId(0),
            mac: MacParams::new(sf, phy),
            arbitration: Arbitration::Pan,
            duration: 1 << (DEFAULT_N_MAX + 4),
            stars: Vec::new(),
            nodes: Vec::new(),
            flows: Vec::new(),
            range: None,
            interference: Vec::new(),
            contenders: None,
        }
    }

    pub fn pan_star(&self) -> StarId {
        self.pan.as_star()
    }

    /// Every star including the PAN coordinator's own.
    pub fn all_stars(&self) -> Vec<StarId> {
        let mut v = vec![self.pan_star()];
        v.extend(self.stars.iter().map(|s| s.id));
        v
    }

    pub fn coordinators(&self) -> Vec<NodeId> {
        self.all_stars().into_iter().map(|s| s.coordinator()).collect()
    }

    /// Star a device belongs to; coordinators belong to their own star.
    pub fn star_of(&self, id: NodeId) -> Option<StarId> {
        if self.all_stars().contains(&id.as_star()) {
            return Some(id.as_star());
        }
        self.nodes.iter().find(|n| n.id == id).map(|n| n.star)
    }

    pub fn is_coordinator(&self, id: NodeId) -> bool {
        self.all_stars().contains(&id.as_star())
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        match &self.range {
            None => true,
            Some(pairs) => pairs.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)),
        }
    }

    /// The star in which a flow holds its reservation, and who owns it.
    pub fn flow_owner(&self, f: &FlowSpec) -> (NodeId, StarId) {
        if self.is_coordinator(f.src) {
            (f.dst, self.star_of(f.dst).unwrap_or(f.src.as_star()))
        } else {
            (f.src, self.star_of(f.src).unwrap_or(self.pan_star()))
        }
    }

    /// Interference pairs, with the PAN star interfering with every star
    /// since the PAN coordinator reaches every coordinator.
    pub fn interference_pairs(&self) -> Vec<(StarId, StarId)> {
        let mut v = self.interference.clone();
        if self.arbitration == Arbitration::Pan {
            for s in &self.stars {
                v.push((self.pan_star(), s.id));
            }
        }
        v
    }

    pub fn contenders(&self) -> u32 {
        self.contenders
            .unwrap_or_else(|| self.flows.iter().filter(|f| f.mode == FlowMode::Cap).count() as u32)
    }

    /// Checks every scenario invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        let mut err = |m: String| issues.push(Issue { line: None, message: m });
        if let Err(e) = self.mac.sf.validate() {
            err(format!("superframe: {e}"));
        }
        if let Err(e) = self.mac.phy.validate() {
            err(format!("phy: {e}"));
        }
        if let Err(e) = self.mac.csma.validate() {
            err(format!("csma: {e}"));
        }
        if self.mac.n_max > 12 {
            err(format!("n_max {} is too large (at most 12)", self.mac.n_max));
        }
        if self.duration == 0 {
            err("duration must be at least one superframe".into());
        }
        if self.mac.inactivity_threshold == 0 {
            err("inactivity threshold must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        ids.insert(self.pan);
        for s in &self.stars {
            if !ids.insert(s.id.coordinator()) {
                err(format!("duplicate device id {}", s.id));
            }
            if s.gbs_level > self.mac.n_max {
                err(format!("star {}: gbs_level {} exceeds n_max {}", s.id, s.gbs_level, self.mac.n_max));
            }
        }
        for n in &self.nodes {
            if !ids.insert(n.id) {
                err(format!("duplicate device id {}", n.id));
            }
            if n.id == NodeId::BROADCAST {
                err(format!("device id {} is reserved for broadcast", n.id));
            }
            if !self.all_stars().contains(&n.star) {
                err(format!("node {} references unknown star {}", n.id, n.star));
            } else if !self.in_range(n.id, n.star.coordinator()) {
                err(format!("node {} is out of range of its coordinator {}", n.id, n.star.coordinator()));
            }
            if let Some(l) = n.pds_level {
                if l > self.mac.n_max {
                    err(format!("node {}: pds_level {} exceeds n_max {}", n.id, l, self.mac.n_max));
                }
            }
        }
        for s in &self.stars {
            if !self.in_range(s.id.coordinator(), self.pan) && self.arbitration == Arbitration::Pan {
                err(format!("star coordinator {} is out of range of the PAN coordinator", s.id));
            }
        }
        let mut flow_ids = BTreeSet::new();
        for f in &self.flows {
            if !flow_ids.insert(f.id) {
                err(format!("duplicate flow id {}", f.id));
            }
            for end in [f.src, f.dst] {
                if !ids.contains(&end) {
                    err(format!("flow {}: unknown device {}", f.id, end));
                }
            }
            if f.src == f.dst {
                err(format!("flow {}: source and destination are the same device", f.id));
            }
            let src_star = self.star_of(f.src);
            let dst_star = self.star_of(f.dst);
            let up = !self.is_coordinator(f.src) && src_star.map(|s| s.coordinator()) == Some(f.dst);
            let down = self.is_coordinator(f.src) && !self.is_coordinator(f.dst) && dst_star == Some(f.src.as_star());
            if ids.contains(&f.src) && ids.contains(&f.dst) && !up && !down {
                err(format!("flow {}: endpoints must be a node and its own star coordinator", f.id));
            }
            if down && f.mode == FlowMode::Cap {
                err(format!("flow {}: coordinators do not contend in the CAP", f.id));
            }
            if ids.contains(&f.src) && ids.contains(&f.dst) && !self.in_range(f.src, f.dst) {
                err(format!("flow {}: endpoints {} and {} are out of radio range", f.id, f.src, f.dst));
            }
            if f.psdu < MIN_DATA_PSDU || f.psdu > self.mac.phy.max_psdu_bytes {
                err(format!(
                    "flow {}: psdu {} outside [{}, {}]",
                    f.id, f.psdu, MIN_DATA_PSDU, self.mac.phy.max_psdu_bytes
                ));
            }
            if let Some(l) = f.mode.level() {
                if l > self.mac.n_max {
                    err(format!("flow {}: level {} exceeds n_max {}", f.id, l, self.mac.n_max));
                }
            }
        }
        if let Some(pairs) = &self.range {
            for (a, b) in pairs {
                for end in [a, b] {
                    if !ids.contains(end) {
                        err(format!("range: unknown device {end}"));
                    }
                }
            }
        }
        for (a, b) in &self.interference {
            for end in [a, b] {
                if !self.all_stars().contains(end) {
                    err(format!("interfere: unknown star {end}"));
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError(issues))
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    kind: String,
    arg: Option<String>,
    line: usize,
    entries: BTreeMap<String, Entry>,
    /// `range` and `interfere` may repeat inside `[links]`.
    lists: Vec<(String, Entry)>,
}

/// Parses a scenario file and validates it.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut issues = Vec::new();
    let sections = split_sections(text, &mut issues);
    if !issues.is_empty() {
        return Err(ScenarioError(issues));
    }
    let scenario = interpret(&sections, &mut issues);
    if !issues.is_empty() {
        return Err(ScenarioError(issues));
    }
    let scenario = scenario.expect("no issues implies a scenario");
    scenario.validate()?;
    Ok(scenario)
}

fn split_sections(text: &str, issues: &mut Vec<Issue>) -> Vec<Section> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(inner) = content.strip_prefix('[') {
            let Some(inner) = inner.strip_suffix(']') else {
                issues.push(Issue { line: Some(line), message: format!("malformed section header `{content}`") });
                continue;
            };
            let mut parts = inner.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let arg = parts.next().map(str::to_string);
            if parts.next().is_some() {
                issues.push(Issue { line: Some(line), message: format!("too many words in section header `{content}`") });
            }
            sections.push(Section { kind, arg, line, entries: BTreeMap::new(), lists: Vec::new() });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            issues.push(Issue { line: Some(line), message: format!("expected `key = value`, found `{content}`") });
            continue;
        };
        let Some(section) = sections.last_mut() else {
            issues.push(Issue { line: Some(line), message: "key outside of any section".into() });
            continue;
        };
        let key = key.trim().to_string();
        let entry = Entry { value: value.trim().to_string(), line };
        if section.kind == "links" {
            section.lists.push((key, entry));
        } else if let Some(prev) = section.entries.get(&key) {
            issues.push(Issue {
                line: Some(line),
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        } else {
            section.entries.insert(key, entry);
        }
    }
    sections
}

struct Reader<'a, 'i> {
    section: &'a Section,
    issues: &'i mut Vec<Issue>,
    used: BTreeSet<&'a str>,
}

impl<'a, 'i> Reader<'a, 'i> {
    fn new(section: &'a Section, issues: &'i mut Vec<Issue>) -> Self {
        Reader { section, issues, used: BTreeSet::new() }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a Entry> {
        self.used.insert(key);
        self.section.entries.get(key)
    }

    fn fail(&mut self, line: usize, message: String) {
        self.issues.push(Issue { line: Some(line), message });
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'a str, default: T) -> T {
        match self.raw(key) {
            None => default,
            Some(e) => match e.value.parse() {
                Ok(v) => v,
                Err(_) => {
                    self.fail(e.line, format!("`{key}`: cannot parse `{}`", e.value));
                    default
                }
            },
        }
    }

    fn required<T: std::str::FromStr + Default>(&mut self, key: &'a str) -> T {
        if self.section.entries.contains_key(key) {
            self.parse(key, T::default())
        } else {
            let line = self.section.line;
            self.fail(line, format!("[{}] is missing `{key}`", self.section.kind));
            T::default()
        }
    }

    fn flag(&mut self, key: &'a str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                other => {
                    self.fail(e.line, format!("`{key}`: expected true or false, found `{other}`"));
                    default
                }
            },
        }
    }

    fn finish(self) {
        for (k, e) in &self.section.entries {
            if !self.used.contains(k.as_str()) {
                self.issues.push(Issue { line: Some(e.line), message: format!("unknown key `{k}` in [{}]", self.section.kind) });
            }
        }
    }
}

fn section_id(s: &Section, issues: &mut Vec<Issue>) -> Option<u16> {
    match s.arg.as_deref().map(str::parse::<u16>) {
        Some(Ok(v)) => Some(v),
        _ => {
            issues.push(Issue { line: Some(s.line), message: format!("[{}] needs a numeric id", s.kind) });
            None
        }
    }
}

fn parse_pairs(e: &Entry, issues: &mut Vec<Issue>) -> Vec<(u16, u16)> {
    let mut out = Vec::new();
    for token in e.value.split_whitespace() {
        let pair = token.split_once('-').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
        match pair {
            Some(p) => out.push(p),
            None => issues.push(Issue { line: Some(e.line), message: format!("expected `a-b` pairs, found `{token}`") }),
        }
    }
    out
}

fn parse_mode(e: &Entry, issues: &mut Vec<Issue>) -> FlowMode {
    let words: Vec<&str> = e.value.split_whitespace().collect();
    let level = |w: Option<&&str>, issues: &mut Vec<Issue>| -> u8 {
        match w.and_then(|s| s.parse().ok()) {
            Some(l) => l,
            None => {
                issues.push(Issue { line: Some(e.line), message: format!("mode `{}` needs a level", e.value) });
                0
            }
        }
    };
    match words.first().copied() {
        Some("cap") if words.len() == 1 => FlowMode::Cap,
        Some("gts") if words.len() <= 2 => FlowMode::Gts { level: level(words.get(1), issues) },
        Some("pds") if words.len() <= 2 => FlowMode::Pds { level: level(words.get(1), issues) },
        _ => {
            issues.push(Issue {
                line: Some(e.line),
                message: format!("mode must be `gts N`, `pds N` or `cap`, found `{}`", e.value),
            });
            FlowMode::Cap
        }
    }
}

fn interpret(sections: &[Section], issues: &mut Vec<Issue>) -> Option<Scenario> {
    let pans: Vec<&Section> = sections.iter().filter(|s| s.kind == "pan").collect();
    if pans.len() != 1 {
        issues.push(Issue { line: pans.get(1).map(|s| s.line), message: format!("expected exactly one [pan] section, found {}", pans.len()) });
        return None;
    }
    let pan = pans[0];
    let mut r = Reader::new(pan, issues);
    let name: String = r.parse("name", "scenario".to_string());
    let id: u16 = r.parse("id", 0);
    let bo: u8 = r.required("bo");
    let so: u8 = r.required("so");
    let slots: u8 = r.parse("slots", DEFAULT_SLOTS);
    let min_cap: u8 = r.parse("min_cap", DEFAULT_MIN_CAP_SLOTS);
    let n_max: u8 = r.parse("n_max", DEFAULT_N_MAX);
    let max_gts: usize = r.parse("max_gts", DEFAULT_MAX_GTS_PER_SUPERFRAME);
    let host_delay: u64 = r.parse("host_delay_us", 0);
    let inactivity: u32 = r.parse("inactivity", DEFAULT_INACTIVITY_THRESHOLD);
    let retry_limit: u8 = r.parse("retry_limit", crate::protocol::DEFAULT_RETRY_LIMIT);
    let assoc_attempts: u8 = r.parse("assoc_attempts", crate::protocol::DEFAULT_ASSOC_ATTEMPTS);
    let contenders: Option<u32> = r.raw("contenders").map(|_| 0).and(Some(r.parse("contenders", 0)));
    let arbitration = match r.raw("arbitration").map(|e| (e.value.as_str(), e.line)) {
        None | Some(("pan", _)) => Arbitration::Pan,
        Some(("none", _)) => Arbitration::None,
        Some((other, line)) => {
            r.fail(line, format!("arbitration must be `pan` or `none`, found `{other}`"));
            Arbitration::Pan
        }
    };
    let duration: u64 = r.parse("duration", 1u64 << (n_max.min(40) + 4));
    r.finish();

    let sf = SuperframeConfig { bo, so, slots_per_superframe: slots, min_cap_slots: min_cap };
    let phy = PhyParams::default().with_host_delay(Micros(host_delay));
    let mut s = Scenario::new(&name, sf, phy);
    s.pan = NodeId(id);
    s.arbitration = arbitration;
    s.duration = duration;
    s.contenders = contenders;
    s.mac.n_max = n_max;
    s.mac.max_gts_per_superframe = max_gts;
    s.mac.inactivity_threshold = inactivity;
    s.mac.retry_limit = retry_limit;
    s.mac.assoc_attempts = assoc_attempts;

    for sec in sections {
        match sec.kind.as_str() {
            "pan" => {}
            "star" => {
                let id = section_id(sec, issues);
                let mut r = Reader::new(sec, issues);
                let gbs_level: u8 = r.parse("gbs_level", 0);
                r.finish();
                if let Some(id) = id {
                    s.stars.push(StarSpec { id: StarId(id), gbs_level });
                }
            }
            "node" => {
                let id = section_id(sec, issues);
                let mut r = Reader::new(sec, issues);
                let star: u16 = r.required("star");
                let associated = r.flag("associated", true);
                let critical = r.flag("critical", false);
                let pds_level: Option<u8> = r.raw("pds_level").map(|_| 0).and(Some(r.parse("pds_level", 0)));
                if critical && pds_level.is_none() {
                    let line = sec.line;
                    r.fail(line, "a critical node needs a `pds_level`".into());
                }
                r.finish();
                if let Some(id) = id {
                    s.nodes.push(NodeSpec { id: NodeId(id), star: StarId(star), associated, pds_level });
                }
            }
            "flow" => {
                let id = section_id(sec, issues);
                let mut r = Reader::new(sec, issues);
                let src: u16 = r.required("src");
                let dst: Option<u16> = r.raw("dst").map(|_| 0).and(Some(r.parse("dst", 0)));
                let psdu: usize = r.parse("psdu", 127);
                let acked = r.flag("acked", true);
                let mode_entry = r.raw("mode");
                let load_entry = r.raw("load");
                r.finish();
                let mode = match mode_entry {
                    Some(e) => parse_mode(e, issues),
                    None => {
                        issues.push(Issue { line: Some(sec.line), message: "[flow] is missing `mode`".into() });
                        FlowMode::Cap
                    }
                };
                let load = match load_entry {
                    None => Load::Saturate,
                    Some(e) if e.value == "saturate" => Load::Saturate,
                    Some(e) => match e.value.parse() {
                        Ok(n) => Load::PerSuperframe(n),
                        Err(_) => {
                            issues.push(Issue {
                                line: Some(e.line),
                                message: format!("load must be `saturate` or frames per superframe, found `{}`", e.value),
                            });
                            Load::Saturate
                        }
                    },
                };
                if let Some(id) = id {
                    let src = NodeId(src);
                    let dst = match dst {
                        Some(d) => NodeId(d),
                        None => s.nodes.iter().find(|n| n.id == src).map(|n| n.star.coordinator()).unwrap_or(s.pan),
                    };
                    s.flows.push(FlowSpec { id: FlowId(u32::from(id)), src, dst, psdu, acked, mode, load });
                }
            }
            "links" => {
                let mut range = Vec::new();
                for (key, e) in &sec.lists {
                    match key.as_str() {
                        "range" => range.extend(parse_pairs(e, issues).into_iter().map(|(a, b)| (NodeId(a), NodeId(b)))),
                        "interfere" => s
                            .interference
                            .extend(parse_pairs(e, issues).into_iter().map(|(a, b)| (StarId(a), StarId(b)))),
                        other => issues.push(Issue { line: Some(e.line), message: format!("unknown key `{other}` in [links]") }),
                    }
                }
                if !range.is_empty() {
                    s.range.get_or_insert_with(Vec::new).extend(range);
                }
            }
            other => issues.push(Issue { line: Some(sec.line), message: format!("unknown section [{other}]") }),
        }
    }
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
[pan]
name = sample
bo = 3
so = 3

[node 1]
star = 0

[flow 1]
src = 1
mode = gts 0
";

    #[test]
    fn minimal_file_parses_with_defaults() {
        let s = parse_scenario(SAMPLE).unwrap();
        assert_eq!(s.name, "sample");
        assert_eq!(s.mac.sf.slots_per_superframe, 16);
        assert_eq!(s.duration, 256);
        assert_eq!(s.flows[0].dst, NodeId(0));
        assert_eq!(s.flows[0].mode, FlowMode::Gts { level: 0 });
        assert_eq!(s.flows[0].load, Load::Saturate);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[pan]\nbo = 3\nso = x\nbogus = 1\n";
        let e = parse_scenario(text).unwrap_err();
        let msgs: Vec<String> = e.0.iter().map(|i| i.to_string()).collect();
        assert!(msgs.iter().any(|m| m.starts_with("line 3:")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("line 4:") && m.contains("bogus")), "{msgs:?}");
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = "[pan]\nbo = 2\nso = 3\n[node 1]\nstar = 9\n[flow 1]\nsrc = 1\ndst = 0\npsdu = 300\nmode = gts 7\n";
        let e = parse_scenario(text).unwrap_err();
        let all = e.to_string();
        assert!(all.contains("superframe"), "{all}");
        assert!(all.contains("unknown star 9"), "{all}");
        assert!(all.contains("psdu 300"), "{all}");
        assert!(all.contains("level 7"), "{all}");
    }

    #[test]
    fn links_accumulate() {
        let text = "[pan]\nbo=3\nso=3\n[star 1]\n[node 2]\nstar=1\n[links]\nrange = 0-1 1-2\nrange = 0-2\ninterfere = 0-1\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.range.as_ref().unwrap().len(), 3);
        assert_eq!(s.interference, vec![(StarId(0), StarId(1))]);
        assert!(s.in_range(NodeId(2), NodeId(1)));
    }
}
