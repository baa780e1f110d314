//! Scenario descriptions: everything one simulation run needs, in a
//! single serializable document, so any run is reproducible from the
//! file plus the seed and nothing else.

use psac_core::object::ObjectConfig;
use psac_core::twophase::TimerConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Concurrency-control engine driving every object in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    /// Path-sensitive admission with up to `max_parallel` unresolved
    /// commands per object.
    Psac { max_parallel: usize },
    /// Strict locking: one unresolved command per object, the rest queue.
    TwoPl,
}

impl Engine {
    /// Short form used in CSV rows and on the command line.
    pub fn label(&self) -> String {
        match self {
            Engine::Psac { max_parallel } => format!("psac:{max_parallel}"),
            Engine::TwoPl => "2pl".to_string(),
        }
    }

    /// Parse the `label` form back: `psac:<k>` or `2pl`.
    pub fn parse(s: &str) -> Option<Engine> {
        if s == "2pl" {
            return Some(Engine::TwoPl);
        }
        let k = s.strip_prefix("psac:")?.parse().ok()?;
        if k >= 1 {
            Some(Engine::Psac { max_parallel: k })
        } else {
            None
        }
    }

    pub fn object_config(&self, max_delays: Option<u32>) -> ObjectConfig {
        let mut config = match self {
            Engine::Psac { max_parallel } => ObjectConfig::psac(*max_parallel),
            Engine::TwoPl => ObjectConfig::locking(),
        };
        config.max_delays = max_delays;
        config
    }
}

/// What the simulated users do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Every request opens a fresh account: one command, one new entity,
    /// no cross-entity synchronization.
    NoSync,
    /// Transfers between two accounts drawn uniformly from the whole
    /// population.
    Sync,
    /// Transfers confined to the first `hot_accounts` accounts, which
    /// concentrates contention on a few entities.
    SyncHot { hot_accounts: u32 },
}

/// Operation mix for the transfer workloads. `Deposits` replaces each
/// transfer with a single-command deposit transaction; deposits commute,
/// which makes it the reference workload for serializability checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpMix {
    Transfers,
    Deposits,
}

/// Message delay model, microseconds. Links between distinct nodes and
/// the client's access link draw uniformly from their ranges; messages
/// that stay on one node use the fixed intra-node delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub intra_node_us: u64,
    pub inter_node_us: (u64, u64),
    pub client_us: (u64, u64),
}

impl Default for LatencyModel {
    fn default() -> LatencyModel {
        LatencyModel {
            intra_node_us: 0,
            inter_node_us: (1_000, 5_000),
            client_us: (1_000, 5_000),
        }
    }
}

/// Transaction-layer timeouts, mirrored into the protocol actors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timers {
    pub vote_timeout_us: u64,
    pub working_timeout_us: u64,
    pub resend_interval_us: u64,
    pub max_resends: u32,
}

impl Default for Timers {
    fn default() -> Timers {
        let t = TimerConfig::default();
        Timers {
            vote_timeout_us: t.vote_timeout_us,
            working_timeout_us: t.working_timeout_us,
            resend_interval_us: t.resend_interval_us,
            max_resends: t.max_resends,
        }
    }
}

impl Timers {
    pub fn to_config(self) -> TimerConfig {
        TimerConfig {
            vote_timeout_us: self.vote_timeout_us,
            working_timeout_us: self.working_timeout_us,
            resend_interval_us: self.resend_interval_us,
            max_resends: self.max_resends,
        }
    }
}

/// One injected node failure, with an optional later restart. A restarted
/// node comes back empty; its actors stay wherever failover moved them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub node: u32,
    pub at_us: u64,
    #[serde(default)]
    pub recover_at_us: Option<u64>,
}

/// Failure handling. When enabled, the journal streams of a crashed
/// node's actors are replayed onto live nodes `detection_delay_us` after
/// the crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failover {
    pub enabled: bool,
    pub detection_delay_us: u64,
}

impl Default for Failover {
    fn default() -> Failover {
        Failover {
            enabled: true,
            detection_delay_us: 250_000,
        }
    }
}

fn default_accounts() -> u32 {
    10_000
}
fn default_balance() -> i64 {
    1_000_000
}
fn default_users() -> u32 {
    64
}
fn default_think() -> u64 {
    1_000
}
fn default_amounts() -> (i64, i64) {
    (1, 100)
}
fn default_service_cost() -> u64 {
    100
}
fn default_journal_latency() -> u64 {
    2_000
}
fn default_client_timeout() -> u64 {
    5_000_000
}
fn default_warmup() -> u64 {
    500_000
}
fn default_measure() -> u64 {
    2_000_000
}
fn default_mix() -> OpMix {
    OpMix::Transfers
}

/// A full simulation run description. All times are simulated
/// microseconds; money is integer cents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub nodes: u32,
    pub engine: Engine,
    pub workload: Workload,
    #[serde(default = "default_mix")]
    pub mix: OpMix,
    /// Size of the pre-populated account pool (transfer workloads).
    #[serde(default = "default_accounts")]
    pub accounts: u32,
    #[serde(default = "default_balance")]
    pub initial_balance_cents: i64,
    /// Closed-system user count: each user has at most one request open.
    #[serde(default = "default_users")]
    pub users: u32,
    #[serde(default = "default_think")]
    pub think_time_us: u64,
    /// Per-request amount range in cents, inclusive.
    #[serde(default = "default_amounts")]
    pub amount_cents: (i64, i64),
    #[serde(default)]
    pub latency: LatencyModel,
    /// CPU cost charged per guard evaluation, effect application, and
    /// journal append.
    #[serde(default = "default_service_cost")]
    pub service_cost_us: u64,
    /// Extra wait per journal append; blocks the acting actor but not
    /// the node's CPU.
    #[serde(default = "default_journal_latency")]
    pub journal_latency_us: u64,
    #[serde(default)]
    pub timers: Timers,
    /// How long a user waits for a reply before abandoning the request.
    #[serde(default = "default_client_timeout")]
    pub client_timeout_us: u64,
    #[serde(default = "default_warmup")]
    pub warmup_us: u64,
    #[serde(default = "default_measure")]
    pub measure_us: u64,
    /// Cap on how often one command may be re-delayed before the object
    /// rejects it. Off by default: admission offers no fairness.
    #[serde(default)]
    pub max_delays: Option<u32>,
    #[serde(default)]
    pub failover: Failover,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario `{0}`: node count must be at least 1")]
    NoNodes(String),
    #[error("scenario `{0}`: user count must be at least 1")]
    NoUsers(String),
    #[error("scenario `{0}`: measurement window must be positive")]
    EmptyWindow(String),
    #[error("scenario `{0}`: transfer workloads need at least 2 accounts, got {1}")]
    PoolTooSmall(String, u32),
    #[error("scenario `{0}`: hot set {1} exceeds the account pool {2}")]
    HotSetTooLarge(String, u32, u32),
    #[error("scenario `{0}`: amount range {1}..={2} is invalid")]
    BadAmounts(String, i64, i64),
    #[error("scenario `{0}`: latency range has min above max")]
    BadLatency(String),
    #[error("scenario `{0}`: crash names node {1} but there are only {2} nodes")]
    BadCrashNode(String, u32, u32),
}

impl Scenario {
    /// A runnable starting point; tests and configs override fields.
    pub fn quick(name: &str, engine: Engine, workload: Workload, seed: u64) -> Scenario {
        Scenario {
            name: name.to_string(),
            seed,
            nodes: 4,
            engine,
            workload,
            mix: default_mix(),
            accounts: default_accounts(),
            initial_balance_cents: default_balance(),
            users: default_users(),
            think_time_us: default_think(),
            amount_cents: default_amounts(),
            latency: LatencyModel::default(),
            service_cost_us: default_service_cost(),
            journal_latency_us: default_journal_latency(),
            timers: Timers::default(),
            client_timeout_us: default_client_timeout(),
            warmup_us: default_warmup(),
            measure_us: default_measure(),
            max_delays: None,
            failover: Failover::default(),
            crashes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.name.clone();
        if self.nodes < 1 {
            return Err(ScenarioError::NoNodes(n));
        }
        if self.users < 1 {
            return Err(ScenarioError::NoUsers(n));
        }
        if self.measure_us == 0 {
            return Err(ScenarioError::EmptyWindow(n));
        }
        let needs_pool = matches!(self.workload, Workload::Sync | Workload::SyncHot { .. });
        if needs_pool && self.accounts < 2 {
            return Err(ScenarioError::PoolTooSmall(n, self.accounts));
        }
        if let Workload::SyncHot { hot_accounts } = self.workload {
            if hot_accounts < 2 || hot_accounts > self.accounts {
                return Err(ScenarioError::HotSetTooLarge(n, hot_accounts, self.accounts));
            }
        }
        let (lo, hi) = self.amount_cents;
        if lo < 1 || hi < lo {
            return Err(ScenarioError::BadAmounts(n, lo, hi));
        }
        if self.latency.inter_node_us.0 > self.latency.inter_node_us.1
            || self.latency.client_us.0 > self.latency.client_us.1
        {
            return Err(ScenarioError::BadLatency(n));
        }
        for crash in &self.crashes {
            if crash.node >= self.nodes {
                return Err(ScenarioError::BadCrashNode(n, crash.node, self.nodes));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_labels_round_trip() {
        for e in [Engine::Psac { max_parallel: 8 }, Engine::TwoPl] {
            assert_eq!(Engine::parse(&e.label()), Some(e));
        }
        assert_eq!(Engine::parse("psac:0"), None);
        assert_eq!(Engine::parse("3pl"), None);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let ok = Scenario::quick("x", Engine::TwoPl, Workload::Sync, 1);
        assert!(ok.validate().is_ok());

        let mut bad = ok.clone();
        bad.workload = Workload::SyncHot { hot_accounts: 50_000 };
        assert!(matches!(bad.validate(), Err(ScenarioError::HotSetTooLarge(..))));

        let mut bad = ok.clone();
        bad.amount_cents = (10, 2);
        assert!(matches!(bad.validate(), Err(ScenarioError::BadAmounts(..))));

        let mut bad = ok;
        bad.crashes.push(CrashSpec { node: 9, at_us: 1, recover_at_us: None });
        assert!(matches!(bad.validate(), Err(ScenarioError::BadCrashNode(..))));
    }

    #[test]
    fn terse_json_fills_defaults() {
        let text = r#"{
            "name": "hot",
            "seed": 42,
            "nodes": 2,
            "engine": {"kind": "psac", "max_parallel": 8},
            "workload": {"kind": "sync_hot", "hot_accounts": 10}
        }"#;
        let sc: Scenario = serde_json::from_str(text).unwrap();
        assert_eq!(sc.users, 64);
        assert_eq!(sc.journal_latency_us, 2_000);
        assert!(sc.failover.enabled);
        assert!(sc.validate().is_ok());
    }
}
