//! Certificates, CA placement and the validation protocols as message-driven
//! state machines.
//!
//! Nothing here knows about routing. `initiate`, `handle` and `revoke` return
//! the messages a node emits; the caller routes and delivers them. Signatures
//! are metadata: a certificate is valid unless some authority has revoked it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

pub type CaId = u32;
/// Certificate serial; every node holds one certificate whose serial is its node index.
pub type Serial = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Crl,
    CrlBroadcast,
    Ocsp,
    OcspStapling,
    OcspValidator,
    OcspHybrid,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Crl,
        Protocol::CrlBroadcast,
        Protocol::Ocsp,
        Protocol::OcspStapling,
        Protocol::OcspValidator,
        Protocol::OcspHybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Crl => "crl",
            Protocol::CrlBroadcast => "crl-broadcast",
            Protocol::Ocsp => "ocsp",
            Protocol::OcspStapling => "ocsp-stapling",
            Protocol::OcspValidator => "ocsp-validator",
            Protocol::OcspHybrid => "ocsp-hybrid",
        }
    }

    fn uses_crl(self) -> bool {
        matches!(self, Protocol::Crl | Protocol::CrlBroadcast)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = PkiError;
    fn from_str(s: &str) -> Result<Self, PkiError> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PkiError::InvalidConfig(format!("unknown protocol '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaModel {
    Centralized,
    Distributed,
}

impl fmt::Display for CaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaModel::Centralized => "centralized",
            CaModel::Distributed => "distributed",
        })
    }
}

impl FromStr for CaModel {
    type Err = PkiError;
    fn from_str(s: &str) -> Result<Self, PkiError> {
        match s {
            "centralized" => Ok(CaModel::Centralized),
            "distributed" => Ok(CaModel::Distributed),
            _ => Err(PkiError::InvalidConfig(format!("unknown CA model '{s}'"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PkiError {
    #[error("invalid PKI configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown serial {0}")]
    UnknownSerial(Serial),
    #[error("unknown CA {0}")]
    UnknownCa(CaId),
    #[error("no reachable CA")]
    NoReachableCa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkiConfig {
    pub protocol: Protocol,
    pub ca_model: CaModel,
    #[serde(default)]
    pub subscribe: bool,
    #[serde(default)]
    pub firewall: bool,
    #[serde(default = "default_ttl")]
    pub status_ttl_s: f64,
    #[serde(default = "default_ttl")]
    pub crl_expiry_s: f64,
    #[serde(default = "default_broadcast")]
    pub broadcast_interval_s: f64,
}

fn default_ttl() -> f64 {
    3600.0
}

fn default_broadcast() -> f64 {
    600.0
}

impl PkiConfig {
    pub fn new(protocol: Protocol, ca_model: CaModel) -> Self {
        PkiConfig {
            protocol,
            ca_model,
            subscribe: false,
            firewall: false,
            status_ttl_s: default_ttl(),
            crl_expiry_s: default_ttl(),
            broadcast_interval_s: default_broadcast(),
        }
    }

    pub fn validate(&self) -> Result<(), PkiError> {
        if self.subscribe && self.protocol == Protocol::OcspStapling {
            return Err(PkiError::InvalidConfig(
                "subscribe is unavailable with OCSP stapling: the CA does not know where the certificate status it issues will be sent".into(),
            ));
        }
        if self.protocol == Protocol::OcspHybrid && self.ca_model != CaModel::Distributed {
            return Err(PkiError::InvalidConfig(
                "OCSP hybrid validates in transit at relay CAs and needs the distributed CA model".into(),
            ));
        }
        for (name, v) in [
            ("status_ttl_s", self.status_ttl_s),
            ("crl_expiry_s", self.crl_expiry_s),
            ("broadcast_interval_s", self.broadcast_interval_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PkiError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Relay nodes host CAs for in-transit validation or filtering.
    pub fn relay_cas(&self) -> bool {
        self.protocol == Protocol::OcspHybrid || self.firewall
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub serial: Serial,
    pub subject: NodeId,
    pub issuer: CaId,
    /// Issuer first, root last.
    pub chain: Vec<CaId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertStatus {
    pub serial: Serial,
    pub revoked: bool,
    pub produced_at: f64,
    pub ttl: f64,
}

impl CertStatus {
    pub fn fresh(&self, now: f64) -> bool {
        now < self.produced_at + self.ttl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlDocument {
    pub issuer: CaId,
    pub revoked: BTreeSet<Serial>,
    pub issued_at: f64,
    pub expiry: f64,
}

impl CrlDocument {
    pub fn fresh(&self, now: f64) -> bool {
        now < self.issued_at + self.expiry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Plain,
    SignedMessage,
    CertificateQueryMessage,
    CertificateStatusMessage,
    StapledMessage,
    ValidatorQueryMessage,
    CRLRequestMessage,
    CRLDirectMessage,
    CRLBroadcastMessage,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The application message whose sender is being authenticated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedPayload {
    /// Caller-chosen identifier (establishment pair or probe).
    pub id: u64,
    pub sender: NodeId,
    pub recipient: NodeId,
    pub cert: Certificate,
    pub sent_at: f64,
    /// Links traversed so far by this payload, across validator detours.
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Body {
    Plain { id: u64 },
    Signed(SignedPayload),
    CertificateQuery { serial: Serial },
    CertificateStatus(CertStatus),
    Stapled { signed: SignedPayload, status: CertStatus },
    ValidatorQuery(SignedPayload),
    CrlRequest { ca: CaId },
    CrlDirect(CrlDocument),
    CrlBroadcast(CrlDocument),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Plain { .. } => MessageKind::Plain,
            Body::Signed(_) => MessageKind::SignedMessage,
            Body::CertificateQuery { .. } => MessageKind::CertificateQueryMessage,
            Body::CertificateStatus(_) => MessageKind::CertificateStatusMessage,
            Body::Stapled { .. } => MessageKind::StapledMessage,
            Body::ValidatorQuery(_) => MessageKind::ValidatorQueryMessage,
            Body::CrlRequest { .. } => MessageKind::CRLRequestMessage,
            Body::CrlDirect(_) => MessageKind::CRLDirectMessage,
            Body::CrlBroadcast(_) => MessageKind::CRLBroadcastMessage,
        }
    }

    /// Serial the message is about, if any.
    pub fn serial(&self) -> Option<Serial> {
        match self {
            Body::Signed(p) | Body::ValidatorQuery(p) | Body::Stapled { signed: p, .. } => Some(p.cert.serial),
            Body::CertificateQuery { serial } => Some(*serial),
            Body::CertificateStatus(s) => Some(s.serial),
            _ => None,
        }
    }

    /// The authenticated payload carried, if any.
    pub fn payload(&self) -> Option<&SignedPayload> {
        match self {
            Body::Signed(p) | Body::ValidatorQuery(p) | Body::Stapled { signed: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn payload_mut(&mut self) -> Option<&mut SignedPayload> {
        match self {
            Body::Signed(p) | Body::ValidatorQuery(p) | Body::Stapled { signed: p, .. } => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    /// Other CA hosts to try, in order, if `to` is unreachable.
    pub fallbacks: Vec<NodeId>,
    pub body: Body,
}

impl Message {
    pub fn new(from: NodeId, to: NodeId, body: Body) -> Self {
        Message {
            from,
            to,
            fallbacks: Vec::new(),
            body,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
        })
    }
}

/// A recipient's verdict on one authenticated payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub payload: SignedPayload,
    pub node: NodeId,
    pub decision: Decision,
    pub time: f64,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct HandleOutput {
    pub verdicts: Vec<Verdict>,
    pub outbound: Vec<Message>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaRole {
    /// Authority for a segment (the root is the first segment's).
    Segment(usize),
    /// Co-located with a relay satellite of the given segment.
    Relay(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaInfo {
    pub id: CaId,
    pub host: NodeId,
    pub role: CaRole,
}

/// Where the CAs are and which one each node deals with.
#[derive(Debug, Clone)]
pub struct CaDirectory {
    model: CaModel,
    cas: Vec<CaInfo>,
    node_segment: Vec<usize>,
    segment_ca: Vec<CaId>,
    relay_ca: Vec<Option<CaId>>,
    host_ca: HashMap<NodeId, CaId>,
}

impl CaDirectory {
    /// `segment_hosts[s]` hosts segment `s`'s CA; segment 0's CA is the root.
    /// `relays` are `(node, segment)` pairs that host relay CAs when `relay_cas`.
    pub fn new(
        model: CaModel,
        node_segment: Vec<usize>,
        segment_hosts: &[NodeId],
        relays: &[(NodeId, usize)],
        relay_cas: bool,
    ) -> Result<Self, PkiError> {
        if segment_hosts.is_empty() {
            return Err(PkiError::InvalidConfig("at least one segment is required".into()));
        }
        let n_seg = segment_hosts.len();
        let mut cas = Vec::new();
        let mut segment_ca = vec![0; n_seg];
        match model {
            CaModel::Centralized => cas.push(CaInfo {
                id: 0,
                host: segment_hosts[0],
                role: CaRole::Segment(0),
            }),
            CaModel::Distributed => {
                for (s, &host) in segment_hosts.iter().enumerate() {
                    segment_ca[s] = cas.len() as CaId;
                    cas.push(CaInfo {
                        id: cas.len() as CaId,
                        host,
                        role: CaRole::Segment(s),
                    });
                }
            }
        }
        let mut relay_ca = vec![None; n_seg];
        if relay_cas {
            for &(host, seg) in relays {
                if seg >= n_seg {
                    return Err(PkiError::InvalidConfig(format!("relay {host} has unknown segment {seg}")));
                }
                if relay_ca[seg].is_none() {
                    relay_ca[seg] = Some(cas.len() as CaId);
                }
                cas.push(CaInfo {
                    id: cas.len() as CaId,
                    host,
                    role: CaRole::Relay(seg),
                });
            }
        }
        let mut host_ca = HashMap::new();
        for ca in &cas {
            if host_ca.insert(ca.host, ca.id).is_some() {
                return Err(PkiError::InvalidConfig(format!("node {} hosts two CAs", ca.host)));
            }
            if ca.host.idx() >= node_segment.len() {
                return Err(PkiError::InvalidConfig(format!("CA host {} is not a node", ca.host)));
            }
        }
        Ok(CaDirectory {
            model,
            cas,
            node_segment,
            segment_ca,
            relay_ca,
            host_ca,
        })
    }

    pub fn model(&self) -> CaModel {
        self.model
    }

    pub fn cas(&self) -> &[CaInfo] {
        &self.cas
    }

    pub fn ca(&self, id: CaId) -> &CaInfo {
        &self.cas[id as usize]
    }

    pub fn root(&self) -> CaId {
        0
    }

    pub fn node_count(&self) -> usize {
        self.node_segment.len()
    }

    pub fn segment(&self, n: NodeId) -> usize {
        self.node_segment[n.idx()]
    }

    pub fn ca_at(&self, host: NodeId) -> Option<CaId> {
        self.host_ca.get(&host).copied()
    }

    /// The authority a node deals with: its segment's CA, or the root when centralized.
    pub fn home_ca(&self, n: NodeId) -> CaId {
        self.segment_ca[self.segment(n)]
    }

    pub fn segment_ca(&self, segment: usize) -> CaId {
        self.segment_ca[segment]
    }

    pub fn relay_ca(&self, segment: usize) -> Option<CaId> {
        self.relay_ca.get(segment).copied().flatten()
    }

    pub fn certificate(&self, n: NodeId) -> Certificate {
        let issuer = self.home_ca(n);
        let mut chain = vec![issuer];
        if issuer != self.root() {
            chain.push(self.root());
        }
        Certificate {
            serial: n.0,
            subject: n,
            issuer,
            chain,
        }
    }

    /// Other segment CAs, tried in id order when the home CA is unreachable
    /// (distributed model only: any CA answers for any certificate).
    fn fallbacks(&self, primary: CaId) -> Vec<NodeId> {
        if self.model == CaModel::Centralized {
            return Vec::new();
        }
        self.cas
            .iter()
            .filter(|c| c.id != primary && matches!(c.role, CaRole::Segment(_)))
            .map(|c| c.host)
            .collect()
    }

    /// The in-transit validator for `sender -> recipient` under `protocol`, if any.
    pub fn validator(&self, protocol: Protocol, sender: NodeId, recipient: NodeId) -> Option<CaId> {
        match protocol {
            Protocol::OcspValidator => Some(self.home_ca(sender)),
            Protocol::OcspHybrid => {
                let (ss, rs) = (self.segment(sender), self.segment(recipient));
                if ss == rs {
                    None
                } else {
                    // the relay the message leaves its segment by, else the one it enters by
                    self.relay_ca(ss).or(self.relay_ca(rs)).or(Some(self.home_ca(sender)))
                }
            }
            _ => None,
        }
    }

    /// The CA that would answer status for `recipient` about `sender` and so
    /// would hold the recipient's subscription.
    pub fn answering_ca(&self, protocol: Protocol, sender: NodeId, recipient: NodeId) -> Option<CaId> {
        match protocol {
            Protocol::Ocsp => Some(self.home_ca(recipient)),
            Protocol::OcspValidator | Protocol::OcspHybrid => self.validator(protocol, sender, recipient),
            _ => None,
        }
    }

    /// CA whose CRL decides for messages from `sender` to `recipient`.
    pub fn crl_authority(&self, protocol: Protocol, sender: NodeId, recipient: NodeId) -> CaId {
        match protocol {
            Protocol::CrlBroadcast => self.home_ca(recipient),
            _ => self.home_ca(sender),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CaState {
    /// Serial -> time the CA learned of the revocation.
    pub revoked: BTreeMap<Serial, f64>,
    pub subscriptions: BTreeMap<Serial, BTreeSet<NodeId>>,
}

impl CaState {
    pub fn knows_revoked(&self, serial: Serial) -> bool {
        self.revoked.contains_key(&serial)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodePkiState {
    pub status_cache: HashMap<Serial, CertStatus>,
    pub crl_cache: HashMap<CaId, CrlDocument>,
    pending: Vec<SignedPayload>,
    stapling_outbox: Vec<SignedPayload>,
    awaiting_status: BTreeSet<Serial>,
    awaiting_crl: BTreeSet<CaId>,
}

impl NodePkiState {
    pub fn pending_count(&self) -> usize {
        self.pending.len() + self.stapling_outbox.len()
    }

    /// Fresh knowledge that `serial` is revoked, from a status or any CRL.
    fn knows_revoked(&self, serial: Serial, now: f64) -> bool {
        self.status_cache
            .get(&serial)
            .is_some_and(|s| s.revoked && s.fresh(now))
            || self
                .crl_cache
                .values()
                .any(|c| c.fresh(now) && c.revoked.contains(&serial))
    }

    fn cache_status(&mut self, st: CertStatus) {
        match self.status_cache.get(&st.serial) {
            // a revocation is never replaced by a good status
            Some(old) if old.revoked && !st.revoked => {}
            Some(old) if old.revoked == st.revoked && old.produced_at > st.produced_at => {}
            _ => {
                self.status_cache.insert(st.serial, st);
            }
        }
    }
}

/// All PKI state for one simulation run.
#[derive(Debug, Clone)]
pub struct Pki {
    pub config: PkiConfig,
    pub dir: CaDirectory,
    nodes: Vec<NodePkiState>,
    cas: Vec<CaState>,
}

impl Pki {
    pub fn new(config: PkiConfig, dir: CaDirectory) -> Result<Self, PkiError> {
        config.validate()?;
        Ok(Pki {
            nodes: vec![NodePkiState::default(); dir.node_count()],
            cas: vec![CaState::default(); dir.cas().len()],
            config,
            dir,
        })
    }

    pub fn node(&self, n: NodeId) -> &NodePkiState {
        &self.nodes[n.idx()]
    }

    pub fn ca_state(&self, ca: CaId) -> &CaState {
        &self.cas[ca as usize]
    }

    fn ttl(&self) -> f64 {
        self.config.status_ttl_s
    }

    fn status_from(&self, ca: CaId, serial: Serial, now: f64) -> CertStatus {
        CertStatus {
            serial,
            revoked: self.cas[ca as usize].knows_revoked(serial),
            produced_at: now,
            ttl: self.ttl(),
        }
    }

    fn crl_from(&self, ca: CaId, now: f64) -> CrlDocument {
        CrlDocument {
            issuer: ca,
            revoked: self.cas[ca as usize].revoked.keys().copied().collect(),
            issued_at: now,
            expiry: self.config.crl_expiry_s,
        }
    }

    fn to_ca(&self, from: NodeId, ca: CaId, body: Body) -> Message {
        Message {
            from,
            to: self.dir.ca(ca).host,
            fallbacks: self.dir.fallbacks(ca),
            body,
        }
    }

    /// First messages of an authenticated send from `sender` to `recipient`.
    pub fn initiate(&mut self, id: u64, sender: NodeId, recipient: NodeId, t: f64) -> Result<Vec<Message>, PkiError> {
        if sender == recipient {
            return Err(PkiError::MalformedMessage("sender and recipient coincide".into()));
        }
        let payload = SignedPayload {
            id,
            sender,
            recipient,
            cert: self.dir.certificate(sender),
            sent_at: t,
            hops: 0,
        };
        let p = self.config.protocol;
        Ok(match (p, self.dir.validator(p, sender, recipient)) {
            (Protocol::OcspValidator | Protocol::OcspHybrid, Some(v)) => {
                vec![self.to_ca(sender, v, Body::ValidatorQuery(payload))]
            }
            (Protocol::OcspStapling | Protocol::OcspHybrid, _) => {
                let ca = self.dir.home_ca(sender);
                self.nodes[sender.idx()].stapling_outbox.push(payload);
                vec![self.to_ca(sender, ca, Body::CertificateQuery { serial: sender.0 })]
            }
            _ => vec![Message::new(sender, recipient, Body::Signed(payload))],
        })
    }

    /// Decides `p` at `node` from local knowledge, or returns `None` if it must wait.
    fn try_decide(&self, node: NodeId, p: &SignedPayload, now: f64) -> Option<Decision> {
        let st = &self.nodes[node.idx()];
        let serial = p.cert.serial;
        if st.knows_revoked(serial, now) {
            return Some(Decision::Reject);
        }
        if self.config.protocol.uses_crl() {
            let ca = self.dir.crl_authority(self.config.protocol, p.sender, node);
            return st.crl_cache.get(&ca).filter(|c| c.fresh(now)).map(|_| Decision::Accept);
        }
        st.status_cache
            .get(&serial)
            .filter(|s| s.fresh(now))
            .map(|s| if s.revoked { Decision::Reject } else { Decision::Accept })
    }

    fn verdict(node: NodeId, payload: SignedPayload, decision: Decision, time: f64) -> Verdict {
        Verdict {
            payload,
            node,
            decision,
            time,
        }
    }

    /// Re-examines everything `node` is holding.
    fn release_pending(&mut self, node: NodeId, now: f64, out: &mut HandleOutput) {
        let pending = std::mem::take(&mut self.nodes[node.idx()].pending);
        let mut keep = Vec::new();
        for p in pending {
            match self.try_decide(node, &p, now) {
                Some(d) => out.verdicts.push(Self::verdict(node, p, d, now)),
                None => keep.push(p),
            }
        }
        self.nodes[node.idx()].pending = keep;
    }

    fn learn_revocation(&mut self, ca: CaId, serial: Serial, now: f64, out: &mut HandleOutput) {
        let state = &mut self.cas[ca as usize];
        if state.revoked.contains_key(&serial) {
            return;
        }
        state.revoked.insert(serial, now);
        if self.config.subscribe {
            let host = self.dir.ca(ca).host;
            let subs: Vec<NodeId> = state.subscriptions.get(&serial).into_iter().flatten().copied().collect();
            for n in subs {
                let status = self.status_from(ca, serial, now);
                out.outbound.push(Message::new(host, n, Body::CertificateStatus(status)));
            }
        }
    }

    fn subscribe(&mut self, ca: CaId, serial: Serial, node: NodeId) {
        if self.config.subscribe {
            self.cas[ca as usize].subscriptions.entry(serial).or_default().insert(node);
        }
    }

    fn host_ca(&self, node: NodeId, what: &str) -> Result<CaId, PkiError> {
        self.dir
            .ca_at(node)
            .ok_or_else(|| PkiError::MalformedMessage(format!("{what} delivered to node {node}, which hosts no CA")))
    }

    /// Processes `msg` delivered to `msg.to` at time `now`.
    pub fn handle(&mut self, msg: Message, now: f64) -> Result<HandleOutput, PkiError> {
        let mut out = HandleOutput::default();
        let me = msg.to;
        let proto = self.config.protocol;
        match msg.body {
            Body::Plain { .. } => {}
            Body::Signed(p) => {
                if matches!(proto, Protocol::OcspStapling | Protocol::OcspValidator | Protocol::OcspHybrid) {
                    return Err(PkiError::MalformedMessage(format!(
                        "bare SignedMessage under {proto}; expected a StapledMessage"
                    )));
                }
                if p.recipient != me {
                    return Err(PkiError::MalformedMessage("SignedMessage delivered to the wrong node".into()));
                }
                if let Some(d) = self.try_decide(me, &p, now) {
                    out.verdicts.push(Self::verdict(me, p, d, now));
                    return Ok(out);
                }
                let serial = p.cert.serial;
                let sender = p.sender;
                self.nodes[me.idx()].pending.push(p);
                match proto {
                    Protocol::Ocsp => {
                        if self.nodes[me.idx()].awaiting_status.insert(serial) {
                            let ca = self.dir.home_ca(me);
                            out.outbound.push(self.to_ca(me, ca, Body::CertificateQuery { serial }));
                        }
                    }
                    Protocol::Crl => {
                        let ca = self.dir.crl_authority(proto, sender, me);
                        if self.nodes[me.idx()].awaiting_crl.insert(ca) {
                            out.outbound.push(self.to_ca(me, ca, Body::CrlRequest { ca }));
                        }
                    }
                    // broadcast CRLs have no request path: hold until the next one
                    _ => {}
                }
            }
            Body::CertificateQuery { serial } => {
                let ca = self.host_ca(me, "CertificateQueryMessage")?;
                if serial as usize >= self.dir.node_count() {
                    return Err(PkiError::UnknownSerial(serial));
                }
                self.subscribe(ca, serial, msg.from);
                let status = self.status_from(ca, serial, now);
                out.outbound.push(Message::new(me, msg.from, Body::CertificateStatus(status)));
            }
            Body::CertificateStatus(status) => {
                if let Some(ca) = self.dir.ca_at(me) {
                    // inter-CA revocation propagation
                    if status.revoked {
                        self.learn_revocation(ca, status.serial, now, &mut out);
                    }
                }
                let st = &mut self.nodes[me.idx()];
                st.cache_status(status);
                st.awaiting_status.remove(&status.serial);
                let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut st.stapling_outbox)
                    .into_iter()
                    .partition(|p| p.cert.serial == status.serial);
                st.stapling_outbox = rest;
                for p in ready {
                    let to = p.recipient;
                    out.outbound.push(Message::new(me, to, Body::Stapled { signed: p, status }));
                }
                self.release_pending(me, now, &mut out);
            }
            Body::Stapled { signed, status } => {
                if signed.cert.serial != status.serial {
                    return Err(PkiError::MalformedMessage(
                        "stapled status does not match the signed certificate".into(),
                    ));
                }
                if signed.recipient != me {
                    return Err(PkiError::MalformedMessage("StapledMessage delivered to the wrong node".into()));
                }
                let d = if self.nodes[me.idx()].knows_revoked(status.serial, now) || status.revoked || !status.fresh(now)
                {
                    Decision::Reject
                } else {
                    Decision::Accept
                };
                out.verdicts.push(Self::verdict(me, signed, d, now));
            }
            Body::ValidatorQuery(p) => {
                let ca = self.host_ca(me, "ValidatorQueryMessage")?;
                let status = self.status_from(ca, p.cert.serial, now);
                self.subscribe(ca, p.cert.serial, p.recipient);
                let to = p.recipient;
                out.outbound.push(Message::new(me, to, Body::Stapled { signed: p, status }));
            }
            Body::CrlRequest { ca } => {
                let host_ca = self.host_ca(me, "CRLRequestMessage")?;
                if host_ca != ca {
                    return Err(PkiError::MalformedMessage(format!("CRL request for CA {ca} reached CA {host_ca}")));
                }
                let crl = self.crl_from(ca, now);
                out.outbound.push(Message::new(me, msg.from, Body::CrlDirect(crl)));
            }
            Body::CrlDirect(crl) | Body::CrlBroadcast(crl) => {
                let st = &mut self.nodes[me.idx()];
                st.awaiting_crl.remove(&crl.issuer);
                let newer = st.crl_cache.get(&crl.issuer).map_or(true, |c| c.issued_at <= crl.issued_at);
                if newer {
                    st.crl_cache.insert(crl.issuer, crl);
                }
                self.release_pending(me, now, &mut out);
            }
        }
        Ok(out)
    }

    /// Revokes `serial` at `origin` and returns propagation messages to every other CA.
    pub fn revoke(&mut self, origin: CaId, serial: Serial, t: f64) -> Result<Vec<Message>, PkiError> {
        if origin as usize >= self.cas.len() {
            return Err(PkiError::UnknownCa(origin));
        }
        if serial as usize >= self.dir.node_count() {
            return Err(PkiError::UnknownSerial(serial));
        }
        let mut out = HandleOutput::default();
        self.learn_revocation(origin, serial, t, &mut out);
        let host = self.dir.ca(origin).host;
        let status = self.status_from(origin, serial, t);
        for ca in self.dir.cas() {
            if ca.id != origin {
                out.outbound.push(Message::new(host, ca.host, Body::CertificateStatus(status)));
            }
        }
        Ok(out.outbound)
    }

    /// One broadcast round from `ca` to `targets`.
    pub fn broadcast(&self, ca: CaId, targets: &[NodeId], t: f64) -> Vec<Message> {
        let host = self.dir.ca(ca).host;
        let crl = self.crl_from(ca, t);
        targets
            .iter()
            .map(|&n| Message::new(host, n, Body::CrlBroadcast(crl.clone())))
            .collect()
    }

    /// Segment CAs that broadcast CRLs.
    pub fn broadcasters(&self) -> Vec<CaId> {
        self.dir
            .cas()
            .iter()
            .filter(|c| matches!(c.role, CaRole::Segment(_)))
            .map(|c| c.id)
            .collect()
    }

    /// Whether a relay hosting a CA lets `msg` continue at time `t`.
    pub fn firewall_filter(&self, relay: NodeId, msg: &Message) -> bool {
        if !self.config.firewall {
            return true;
        }
        let Some(ca) = self.dir.ca_at(relay) else {
            return true;
        };
        match msg.body.payload() {
            Some(p) => !self.cas[ca as usize].knows_revoked(p.cert.serial),
            None => true,
        }
    }

    /// Gives `node` a cached good status (or CRL) for `serial` produced at `t`,
    /// as if it had just asked `answering` (which then holds its subscription).
    pub fn seed_cached(&mut self, node: NodeId, serial: Serial, t: f64, answering: Option<CaId>) {
        let ttl = self.ttl();
        self.nodes[node.idx()].cache_status(CertStatus {
            serial,
            revoked: false,
            produced_at: t,
            ttl,
        });
        if let Some(ca) = answering {
            self.subscribe(ca, serial, node);
        }
    }

    /// Gives `node` a CRL from `ca` issued at `t`.
    pub fn seed_crl(&mut self, node: NodeId, ca: CaId, t: f64) {
        let crl = self.crl_from(ca, t);
        self.nodes[node.idx()].crl_cache.insert(ca, crl);
    }
}
