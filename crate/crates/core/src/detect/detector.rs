use std::collections::{BTreeMap, VecDeque};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, Os, PlatformId, ServiceCodebook, SetupClass, SetupType};
use crate::capture::Proto;
use crate::classify::FlowRole;
use crate::flow::FlowKey;
use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Names older than this are forgotten; idle sessions end after it.
    pub horizon_s: f64,
    /// Share of a setup table that must be seen before it is chosen.
    pub setup_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { horizon_s: 600.0, setup_threshold: 0.6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Platform,
    Gameplay,
    Ended,
}

/// How a session was first recognized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    Codebook,
    Signature,
    GameplayName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub client_ip: IpAddr,
    pub platform_id: PlatformId,
    pub setup: SetupType,
    pub setup_ambiguous: bool,
    pub detected_by: DetectionSource,
    pub detected_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    pub os: Option<Os>,
    pub setup_class: Option<SetupClass>,
    pub gameplay_server_ip: Option<IpAddr>,
    pub mgmt_flow: Option<FlowKey>,
    pub gameplay_flows: Vec<(FlowKey, FlowRole)>,
    pub gameplays: u32,
    pub state: SessionState,
    /// Setup decided from service names alone.
    pub codebook_setup: SetupType,
    pub last_activity: Timestamp,
}

impl SessionRecord {
    /// Name-based setup, else the one implied by agent class and OS.
    fn resolve_setup(&mut self) {
        self.setup = if self.codebook_setup != SetupType::Unknown {
            self.codebook_setup
        } else {
            fallback_setup(self.platform_id, self.setup_class, self.os)
        };
    }

    pub fn role_of(&self, key: &FlowKey) -> Option<FlowRole> {
        self.gameplay_flows.iter().find(|(k, _)| k == key).map(|(_, r)| *r)
    }

    pub fn set_role(&mut self, key: FlowKey, role: FlowRole) {
        match self.gameplay_flows.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = role,
            None => self.gameplay_flows.push((key, role)),
        }
    }
}

/// Setup implied by the management port class and the handshake OS.
pub fn fallback_setup(platform: PlatformId, class: Option<SetupClass>, os: Option<Os>) -> SetupType {
    match (platform, class, os) {
        (PlatformId::Gfn, Some(SetupClass::Browser), _) => SetupType::Browser,
        (PlatformId::Gfn, Some(SetupClass::App), Some(Os::Windows | Os::MacOs)) => SetupType::DesktopApp,
        (PlatformId::Gfn, Some(SetupClass::App), Some(Os::Android)) => SetupType::MobileApp,
        _ => SetupType::Unknown,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlatformDetection {
    pub session_id: String,
    pub client_ip: IpAddr,
    pub platform_id: PlatformId,
    pub setup: SetupType,
    /// Top setup scores tied with nothing to break the tie.
    pub ambiguous_setup: bool,
    pub at: Timestamp,
}

/// A gameplay server announced to a client.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServerRegistration {
    pub session_id: String,
    pub client_ip: IpAddr,
    pub server_ip: IpAddr,
    pub registered_at: Timestamp,
    pub class: SetupClass,
    pub platform: PlatformId,
    pub mgmt_flow: Option<FlowKey>,
    /// The name's embedded address equals the flow's server address.
    pub consistent: bool,
    pub udp_port_range: Option<(u16, u16)>,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_ip: IpAddr,
    /// Known service names, oldest first, one entry per name.
    pub observed_names: VecDeque<(Timestamp, String)>,
    pub match_scores: BTreeMap<SetupType, f64>,
    pub session: Option<SessionRecord>,
    pub registration: Option<ServerRegistration>,
}

impl ClientState {
    fn new(client_ip: IpAddr) -> Self {
        ClientState {
            client_ip,
            observed_names: VecDeque::new(),
            match_scores: BTreeMap::new(),
            session: None,
            registration: None,
        }
    }

    fn active_session(&self) -> Option<&SessionRecord> {
        self.session.as_ref().filter(|s| s.state != SessionState::Ended)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DetectorCounters {
    pub names_observed: u64,
    pub names_known: u64,
    pub sessions_detected: u64,
    pub ambiguous_setups: u64,
    pub registrations: u64,
    pub inconsistent_registrations: u64,
}

/// Per-client codebook matching and session bookkeeping.
pub struct SessionDetector {
    codebook: Codebook,
    cfg: DetectorConfig,
    clients: BTreeMap<IpAddr, ClientState>,
    finished: Vec<SessionRecord>,
    next_session: u64,
    id_prefix: String,
    counters: DetectorCounters,
}

/// Fraction of a setup's discriminating entries matched by `names`.
fn setup_score(pb: &ServiceCodebook, setup: SetupType, names: &VecDeque<(Timestamp, String)>) -> f64 {
    let disc = pb.discriminating(setup);
    if disc.is_empty() {
        return 0.0;
    }
    let hit = disc.iter().filter(|p| names.iter().any(|(_, n)| p.matches(n))).count();
    hit as f64 / disc.len() as f64
}

/// Setup choice over the platform's tables and whether a tie was left open.
fn decide_setup(
    pb: &ServiceCodebook,
    scores: &BTreeMap<SetupType, f64>,
    names: &VecDeque<(Timestamp, String)>,
    threshold: f64,
) -> (SetupType, bool) {
    let mut ranked: Vec<(SetupType, f64)> =
        pb.platform_id.setups().into_iter().map(|s| (s, scores.get(&s).copied().unwrap_or(0.0))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let Some(&(top, best)) = ranked.first() else { return (SetupType::Unknown, false) };
    let tied: Vec<SetupType> = ranked.iter().filter(|(_, s)| *s == best).map(|(t, _)| *t).collect();
    if tied.len() == 1 {
        return (if best >= threshold { top } else { SetupType::Unknown }, false);
    }
    if best >= threshold {
        // The newest name that points at only one of the tied tables wins.
        for (_, name) in names.iter().rev() {
            let hits: Vec<SetupType> =
                tied.iter().copied().filter(|s| pb.discriminating(*s).iter().any(|p| p.matches(name))).collect();
            if let [only] = hits[..] {
                return (only, false);
            }
        }
    }
    (SetupType::Unknown, true)
}

impl SessionDetector {
    pub fn new(codebook: Codebook, cfg: DetectorConfig) -> Self {
        SessionDetector {
            codebook,
            cfg,
            clients: BTreeMap::new(),
            finished: Vec::new(),
            next_session: 1,
            id_prefix: String::new(),
            counters: DetectorCounters::default(),
        }
    }

    /// Prefix for session identifiers, to keep several detectors apart.
    pub fn with_id_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.id_prefix = prefix.into();
        self
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &DetectorCounters {
        &self.counters
    }

    pub fn client(&self, ip: &IpAddr) -> Option<&ClientState> {
        self.clients.get(ip)
    }

    pub fn session(&self, client: &IpAddr) -> Option<&SessionRecord> {
        self.clients.get(client).and_then(ClientState::active_session)
    }

    pub fn session_mut(&mut self, client: &IpAddr) -> Option<&mut SessionRecord> {
        self.clients.get_mut(client)?.session.as_mut().filter(|s| s.state != SessionState::Ended)
    }

    pub fn registration(&self, client: &IpAddr) -> Option<&ServerRegistration> {
        let c = self.clients.get(client)?;
        c.active_session()?;
        c.registration.as_ref()
    }

    fn horizon_us(&self) -> i64 {
        (self.cfg.horizon_s * 1e6) as i64
    }

    fn new_session(&mut self, client_ip: IpAddr, platform_id: PlatformId, by: DetectionSource, at: Timestamp) -> SessionRecord {
        let session_id = format!("{}s{}", self.id_prefix, self.next_session);
        self.next_session += 1;
        self.counters.sessions_detected += 1;
        SessionRecord {
            session_id,
            client_ip,
            platform_id,
            setup: SetupType::Unknown,
            setup_ambiguous: false,
            detected_by: by,
            detected_at: at,
            ended_at: None,
            os: None,
            setup_class: None,
            gameplay_server_ip: None,
            mgmt_flow: None,
            gameplay_flows: Vec::new(),
            gameplays: 0,
            state: SessionState::Platform,
            codebook_setup: SetupType::Unknown,
            last_activity: at,
        }
    }

    /// Records a service name seen from the client of `key`.
    pub fn observe_service_name(&mut self, key: &FlowKey, name: &str, ts: Timestamp) {
        self.counters.names_observed += 1;
        let name = name.to_ascii_lowercase();
        let known: Vec<PlatformId> =
            self.codebook.platforms.iter().filter(|p| p.knows(&name)).map(|p| p.platform_id).collect();
        if known.is_empty() {
            return;
        }
        self.counters.names_known += 1;
        let horizon = self.horizon_us();
        let state = self.clients.entry(key.client_ip).or_insert_with(|| ClientState::new(key.client_ip));
        state.observed_names.retain(|(_, n)| *n != name);
        state.observed_names.push_back((ts, name));
        while state.observed_names.front().is_some_and(|(t, _)| ts - *t > horizon) {
            state.observed_names.pop_front();
        }
        for pb in &self.codebook.platforms {
            for setup in pb.platform_id.setups() {
                state.match_scores.insert(setup, setup_score(pb, setup, &state.observed_names));
            }
        }
        let threshold = self.cfg.setup_threshold;
        if let Some(session) = state.session.as_mut().filter(|s| s.state != SessionState::Ended) {
            if known.contains(&session.platform_id) {
                session.last_activity = session.last_activity.max(ts);
                let pb = self.codebook.platform(session.platform_id).expect("session platform is in the codebook");
                let (setup, ambiguous) = decide_setup(pb, &state.match_scores, &state.observed_names, threshold);
                if setup != SetupType::Unknown {
                    session.codebook_setup = setup;
                    session.setup_ambiguous = false;
                } else if session.codebook_setup == SetupType::Unknown {
                    session.setup_ambiguous = ambiguous;
                }
                session.resolve_setup();
            }
        }
    }

    /// Fires once per session start, when every core entry of a platform
    /// has been seen from `client_ip` within the horizon.
    pub fn evaluate_codebook(&mut self, client_ip: IpAddr) -> Option<PlatformDetection> {
        let state = self.clients.get(&client_ip)?;
        if state.active_session().is_some() {
            return None;
        }
        let pb = self.codebook.platforms.iter().find(|pb| {
            pb.core_services.iter().all(|p| state.observed_names.iter().any(|(_, n)| p.matches(n)))
        })?;
        let platform = pb.platform_id;
        let at = state.observed_names.back().map(|(t, _)| *t)?;
        let (setup, ambiguous) = decide_setup(pb, &state.match_scores, &state.observed_names, self.cfg.setup_threshold);
        if ambiguous {
            self.counters.ambiguous_setups += 1;
        }
        let mut session = self.new_session(client_ip, platform, DetectionSource::Codebook, at);
        session.codebook_setup = setup;
        session.setup_ambiguous = ambiguous;
        session.resolve_setup();
        let det = PlatformDetection {
            session_id: session.session_id.clone(),
            client_ip,
            platform_id: platform,
            setup,
            ambiguous_setup: ambiguous,
            at,
        };
        let state = self.clients.get_mut(&client_ip).expect("client exists");
        state.registration = None;
        state.session = Some(session);
        log::debug!("session {} detected for {client_ip} ({platform}, {setup})", det.session_id);
        Some(det)
    }

    fn ensure_session(&mut self, client_ip: IpAddr, platform: PlatformId, by: DetectionSource, ts: Timestamp) -> &mut ClientState {
        let needs = self.clients.get(&client_ip).is_none_or(|c| c.active_session().is_none());
        if needs {
            let s = self.new_session(client_ip, platform, by, ts);
            let state = self.clients.entry(client_ip).or_insert_with(|| ClientState::new(client_ip));
            state.session = Some(s);
            state.registration = None;
        }
        self.clients.get_mut(&client_ip).expect("client exists")
    }

    fn store_registration(&mut self, reg: ServerRegistration) -> ServerRegistration {
        self.counters.registrations += 1;
        if !reg.consistent {
            self.counters.inconsistent_registrations += 1;
            log::warn!("gameplay name of {} embeds {}, flow goes elsewhere", reg.client_ip, reg.server_ip);
        }
        let state = self.clients.get_mut(&reg.client_ip).expect("client exists");
        let session = state.session.as_mut().expect("session exists");
        session.gameplay_server_ip = Some(reg.server_ip);
        session.mgmt_flow = reg.mgmt_flow.or(session.mgmt_flow);
        session.setup_class = Some(reg.class);
        session.state = SessionState::Gameplay;
        session.gameplays += 1;
        session.last_activity = session.last_activity.max(reg.registered_at);
        if let Some(mgmt) = reg.mgmt_flow {
            session.set_role(mgmt, FlowRole::GameplayMgmt);
        }
        session.resolve_setup();
        state.registration = Some(reg.clone());
        reg
    }

    /// Registers the server named by a management flow's server name.
    pub fn register_gameplay_server(&mut self, name: &str, key: &FlowKey, ts: Timestamp) -> Option<ServerRegistration> {
        if key.proto != Proto::Tcp {
            return None;
        }
        let name = name.to_ascii_lowercase();
        let (platform, server_ip, class) = self.codebook.platforms.iter().find_map(|pb| {
            let ip = pb.gameplay_name_pattern.as_ref()?.decode(&name)?;
            Some((pb.platform_id, ip, pb.mgmt_class(key.server_port)?))
        })?;
        if self.registration(&key.client_ip).is_some_and(|r| r.mgmt_flow == Some(*key)) {
            return None;
        }
        let state = self.ensure_session(key.client_ip, platform, DetectionSource::GameplayName, ts);
        let session_id = state.session.as_ref().expect("session exists").session_id.clone();
        self.store_registration(ServerRegistration {
            session_id,
            client_ip: key.client_ip,
            server_ip,
            registered_at: ts,
            class,
            platform,
            mgmt_flow: Some(*key),
            consistent: server_ip == key.server_ip,
            udp_port_range: None,
        })
        .into()
    }

    /// Records a handshake-size match on a management flow. A flow whose
    /// server name is unknown registers its own server address.
    pub fn note_signature(
        &mut self,
        key: &FlowKey,
        platform: PlatformId,
        os: Os,
        class: SetupClass,
        flow_start: Timestamp,
        named: bool,
    ) -> Option<ServerRegistration> {
        let state = self.ensure_session(key.client_ip, platform, DetectionSource::Signature, flow_start);
        let session = state.session.as_mut().expect("session exists");
        session.os = Some(os);
        if session.setup_class.is_none() {
            session.setup_class = Some(class);
        }
        session.resolve_setup();
        let session_id = session.session_id.clone();
        let already = state.registration.as_ref().is_some_and(|r| r.mgmt_flow == Some(*key));
        if named || already {
            return None;
        }
        Some(self.store_registration(ServerRegistration {
            session_id,
            client_ip: key.client_ip,
            server_ip: key.server_ip,
            registered_at: flow_start,
            class,
            platform,
            mgmt_flow: Some(*key),
            consistent: true,
            udp_port_range: None,
        }))
    }

    /// Registers the server of a UDP flow for platforms whose gameplay is
    /// recognized by server port range rather than a management name.
    pub fn register_udp_server(&mut self, key: &FlowKey, flow_start: Timestamp) -> Option<ServerRegistration> {
        if key.proto != Proto::Udp {
            return None;
        }
        let session = self.session(&key.client_ip)?;
        let pb = self.codebook.platform(session.platform_id)?;
        let (lo, hi) = pb.gameplay_udp_ports?;
        if !(lo..=hi).contains(&key.server_port) {
            return None;
        }
        if self.registration(&key.client_ip).is_some_and(|r| r.server_ip == key.server_ip) {
            return None;
        }
        let class = if session.setup == SetupType::HardwareConsole { SetupClass::App } else { SetupClass::Browser };
        let reg = ServerRegistration {
            session_id: session.session_id.clone(),
            client_ip: key.client_ip,
            server_ip: key.server_ip,
            registered_at: flow_start,
            class,
            platform: pb.platform_id,
            mgmt_flow: None,
            consistent: true,
            udp_port_range: Some((lo, hi)),
        };
        Some(self.store_registration(reg))
    }

    /// Marks gameplay traffic of `client_ip` at `ts`.
    pub fn touch(&mut self, client_ip: &IpAddr, ts: Timestamp) {
        if let Some(s) = self.session_mut(client_ip) {
            s.last_activity = s.last_activity.max(ts);
        }
    }

    /// Returns the client's session to the platform state after its
    /// gameplay flows have gone idle.
    pub fn end_gameplay(&mut self, client_ip: &IpAddr) {
        if let Some(state) = self.clients.get_mut(client_ip) {
            if let Some(s) = state.session.as_mut().filter(|s| s.state == SessionState::Gameplay) {
                s.state = SessionState::Platform;
                state.registration = None;
            }
        }
    }

    fn close(state: &mut ClientState, at: Timestamp, finished: &mut Vec<SessionRecord>) {
        if let Some(mut s) = state.session.take().filter(|s| s.state != SessionState::Ended) {
            s.state = SessionState::Ended;
            s.ended_at = Some(at);
            finished.push(s);
        }
        state.registration = None;
    }

    /// Ends platform-state sessions idle for longer than the horizon.
    pub fn expire(&mut self, now: Timestamp) {
        let horizon = self.horizon_us();
        for state in self.clients.values_mut() {
            let idle = state.session.as_ref().is_some_and(|s| s.state == SessionState::Platform && now - s.last_activity > horizon);
            if idle {
                let at = state.session.as_ref().map(|s| s.last_activity).unwrap_or(now);
                Self::close(state, at, &mut self.finished);
            }
            state.observed_names.retain(|(t, _)| now - *t <= horizon);
        }
        self.clients.retain(|_, c| c.session.is_some() || !c.observed_names.is_empty());
    }

    /// Ends every open session and returns all sessions, ordered by detection.
    pub fn finish(&mut self) -> Vec<SessionRecord> {
        for state in self.clients.values_mut() {
            let at = state.session.as_ref().map(|s| s.last_activity);
            if let Some(at) = at {
                Self::close(state, at, &mut self.finished);
            }
        }
        let mut out = std::mem::take(&mut self.finished);
        out.sort_by(|a, b| (a.detected_at, &a.client_ip).cmp(&(b.detected_at, &b.client_ip)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLIENT: &str = "192.0.2.10";

    fn key(proto: Proto, server: &str, port: u16) -> FlowKey {
        FlowKey { client_ip: CLIENT.parse().unwrap(), client_port: 50000, server_ip: server.parse().unwrap(), server_port: port, proto }
    }

    fn https() -> FlowKey {
        key(Proto::Tcp, "198.51.100.1", 443)
    }

    fn detector() -> SessionDetector {
        SessionDetector::new(Codebook::default(), DetectorConfig::default())
    }

    const GFN_CORE: [&str; 5] = [
        "login.nvidia.com",
        "userstore.nvidia.com",
        "events.geforcenow.com",
        "gfnpc.api.entitlement-prod.nvidiagrid.net",
        "server_eu_pnt.nvidiagrid.net",
    ];

    fn feed(d: &mut SessionDetector, names: &[&str], t0: i64) {
        for (i, n) in names.iter().enumerate() {
            d.observe_service_name(&https(), n, Timestamp::from_secs(t0 + i as i64));
        }
    }

    fn ip() -> IpAddr {
        CLIENT.parse().unwrap()
    }

    #[test]
    fn login_marks_core_entry() {
        let mut d = detector();
        feed(&mut d, &["login.nvidia.com"], 0);
        assert_eq!(d.client(&ip()).unwrap().observed_names.len(), 1);
        assert!(d.evaluate_codebook(ip()).is_none());
    }

    #[test]
    fn play_raises_only_browser_score() {
        let mut d = detector();
        feed(&mut d, &["login.nvidia.com"], 0);
        let before = d.client(&ip()).unwrap().match_scores.clone();
        feed(&mut d, &["play.nvidia.com"], 1);
        let after = &d.client(&ip()).unwrap().match_scores;
        assert!(after[&SetupType::Browser] > before[&SetupType::Browser]);
        assert_eq!(after[&SetupType::DesktopApp], before[&SetupType::DesktopApp]);
        assert_eq!(after[&SetupType::MobileApp], before[&SetupType::MobileApp]);
    }

    #[test]
    fn unrelated_names_change_nothing() {
        let mut d = detector();
        feed(&mut d, &["login.nvidia.com"], 0);
        let before = d.client(&ip()).unwrap().match_scores.clone();
        feed(&mut d, &["example.com"], 1);
        assert_eq!(d.client(&ip()).unwrap().match_scores, before);
        assert_eq!(d.client(&ip()).unwrap().observed_names.len(), 1);
    }

    #[test]
    fn desktop_detection_fires_once() {
        let mut d = detector();
        feed(&mut d, &["cms.nvidia.com", "als.geforcenow.com", "gx-target-experiments-frontend-api.geforce.com"], 0);
        feed(&mut d, &GFN_CORE, 10);
        let det = d.evaluate_codebook(ip()).unwrap();
        assert_eq!((det.platform_id, det.setup, det.ambiguous_setup), (PlatformId::Gfn, SetupType::DesktopApp, false));
        assert!(d.evaluate_codebook(ip()).is_none());
    }

    #[test]
    fn core_only_is_an_unresolved_tie() {
        let mut d = detector();
        feed(&mut d, &GFN_CORE, 0);
        let det = d.evaluate_codebook(ip()).unwrap();
        assert_eq!(det.setup, SetupType::Unknown);
        assert!(det.ambiguous_setup);
        assert_eq!(d.counters().ambiguous_setups, 1);
    }

    #[test]
    fn setup_refines_after_detection() {
        let mut d = detector();
        feed(&mut d, &GFN_CORE, 0);
        d.evaluate_codebook(ip()).unwrap();
        feed(&mut d, &["play.nvidia.com", "gx-target-experiments-frontend-api.geforce.com"], 10);
        let s = d.session(&ip()).unwrap();
        assert_eq!(s.setup, SetupType::Browser);
        assert!(!s.setup_ambiguous);
    }

    #[test]
    fn xbox_pc_browser() {
        let mut d = detector();
        feed(&mut d, &["title.auth.xboxlive.com", "regional-node.weu.xboxlive.com", "xgpuweb.gssv-play-prod.xboxlive.com"], 0);
        let det = d.evaluate_codebook(ip()).unwrap();
        assert_eq!((det.platform_id, det.setup), (PlatformId::XboxCloud, SetupType::PcBrowser));
    }

    #[test]
    fn names_leave_the_horizon() {
        let mut d = detector();
        feed(&mut d, &GFN_CORE[..4], 0);
        feed(&mut d, &GFN_CORE[4..], 700);
        assert!(d.evaluate_codebook(ip()).is_none());
    }

    #[test]
    fn gameplay_name_registers_server() {
        let mut d = detector();
        let mgmt = key(Proto::Tcp, "203.0.113.7", 322);
        let reg = d.register_gameplay_server("203-0-113-7.pnt.nvidiagrid.net", &mgmt, Timestamp::from_secs(5)).unwrap();
        assert_eq!(reg.server_ip, "203.0.113.7".parse::<IpAddr>().unwrap());
        assert_eq!(reg.class, SetupClass::App);
        assert!(reg.consistent);
        let s = d.session(&ip()).unwrap();
        assert_eq!(s.state, SessionState::Gameplay);
        assert_eq!(s.role_of(&mgmt), Some(FlowRole::GameplayMgmt));

        let browser = key(Proto::Tcp, "203.0.113.7", 49100);
        assert_eq!(d.register_gameplay_server("203-0-113-7.pnt.nvidiagrid.net", &browser, Timestamp::from_secs(6)).unwrap().class, SetupClass::Browser);
        assert!(d.register_gameplay_server("cms.nvidia.com", &https(), Timestamp::from_secs(7)).is_none());
        let https_named = key(Proto::Tcp, "203.0.113.7", 443);
        assert!(d.register_gameplay_server("203-0-113-7.pnt.nvidiagrid.net", &https_named, Timestamp::from_secs(8)).is_none());
    }

    #[test]
    fn mismatched_embedded_ip_is_flagged() {
        let mut d = detector();
        let mgmt = key(Proto::Tcp, "203.0.113.9", 322);
        let reg = d.register_gameplay_server("203-0-113-7.pnt.nvidiagrid.net", &mgmt, Timestamp::from_secs(5)).unwrap();
        assert!(!reg.consistent);
        assert_eq!(d.counters().inconsistent_registrations, 1);
    }

    #[test]
    fn signature_fallback_sets_setup() {
        let mut d = detector();
        let mgmt = key(Proto::Tcp, "203.0.113.7", 322);
        let reg = d.note_signature(&mgmt, PlatformId::Gfn, Os::Android, SetupClass::App, Timestamp::from_secs(3), false).unwrap();
        assert_eq!(reg.server_ip, mgmt.server_ip);
        let s = d.session(&ip()).unwrap();
        assert_eq!((s.setup, s.detected_by), (SetupType::MobileApp, DetectionSource::Signature));
    }

    #[test]
    fn idle_sessions_end() {
        let mut d = detector();
        feed(&mut d, &GFN_CORE, 0);
        d.evaluate_codebook(ip()).unwrap();
        d.expire(Timestamp::from_secs(300));
        assert!(d.session(&ip()).is_some());
        d.expire(Timestamp::from_secs(1000));
        assert!(d.session(&ip()).is_none());
        let done = d.finish();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].state, SessionState::Ended);
    }
}
