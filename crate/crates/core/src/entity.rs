//! Entity registry, liveness and exclusive control leases.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{Millis, Symbol};

pub type EntityId = Symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    MobileRobot,
    SmartLobby,
    Receptionist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityName {
    MoveTo,
    ObservePersons,
    AskPerson,
    ReceiveObject,
    HandoverObject,
    Announce,
    RegisterVisitor,
}

impl CapabilityName {
    pub fn name(self) -> &'static str {
        match self {
            CapabilityName::MoveTo => "move_to",
            CapabilityName::ObservePersons => "observe_persons",
            CapabilityName::AskPerson => "ask_person",
            CapabilityName::ReceiveObject => "receive_object",
            CapabilityName::HandoverObject => "handover_object",
            CapabilityName::Announce => "announce",
            CapabilityName::RegisterVisitor => "register_visitor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub name: CapabilityName,
    /// Capability-specific limits, e.g. `range_m` for `observe_persons`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl Capability {
    pub fn new(name: CapabilityName) -> Self {
        Capability {
            name,
            params: BTreeMap::new(),
        }
    }
}

impl EntityKind {
    /// Minimal capability set every entity of this kind offers.
    pub fn default_capabilities(self) -> Vec<Capability> {
        use CapabilityName::*;
        let names: &[CapabilityName] = match self {
            EntityKind::MobileRobot => &[
                MoveTo,
                ObservePersons,
                AskPerson,
                ReceiveObject,
                HandoverObject,
                Announce,
            ],
            EntityKind::SmartLobby => &[ObservePersons, Announce],
            EntityKind::Receptionist => &[RegisterVisitor, Announce, ObservePersons],
        };
        names
            .iter()
            .map(|&n| {
                let mut cap = Capability::new(n);
                if n == ObservePersons && self == EntityKind::MobileRobot {
                    cap.params.insert("range_m".into(), 3.0);
                }
                cap
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityStatus {
    Online,
    Offline,
    Controlled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDescriptor {
    pub entity_id: EntityId,
    pub kind: EntityKind,
    pub location: Symbol,
    pub capabilities: Vec<Capability>,
    #[serde(default)]
    pub voice_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: EntityId,
    pub kind: EntityKind,
    pub location: Symbol,
    pub capabilities: Vec<Capability>,
    pub status: EntityStatus,
    pub last_heartbeat: Millis,
    pub busy: bool,
    pub voice_label: String,
}

impl EntityRecord {
    pub fn has(&self, capability: CapabilityName) -> bool {
        self.capabilities.iter().any(|c| c.name == capability)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlLease {
    pub lease_id: String,
    pub request_id: String,
    pub entity_ids: BTreeSet<EntityId>,
    pub granted_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityError {
    #[error("entity `{0}` is already online")]
    Conflict(EntityId),
    #[error("entity `{0}` declares no capabilities")]
    NoCapabilities(EntityId),
    #[error("entity `{0}` is not registered")]
    NotRegistered(EntityId),
    #[error("lease request names no entities")]
    EmptyLease,
    #[error("lease denied: `{blocker}` is {reason}")]
    LeaseDenied { blocker: EntityId, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LivenessConfig {
    pub heartbeat_timeout_ms: Millis,
    pub sweep_interval_ms: Millis,
}

impl Default for LivenessConfig {
    fn default() -> Self {
        LivenessConfig {
            heartbeat_timeout_ms: 10_000,
            sweep_interval_ms: 2_000,
        }
    }
}

/// Outcome of a heartbeat, so the caller can refresh the location fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeartbeatOutcome {
    pub moved_to: Option<Symbol>,
    pub revived: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EntityManager {
    records: BTreeMap<EntityId, EntityRecord>,
    leases: BTreeMap<String, ControlLease>,
    next_lease: u64,
    config: LivenessConfig,
}

impl EntityManager {
    pub fn new(config: LivenessConfig) -> Self {
        EntityManager {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> LivenessConfig {
        self.config
    }

    pub fn register(
        &mut self,
        descriptor: EntityDescriptor,
        now: Millis,
    ) -> Result<&EntityRecord, EntityError> {
        let id = descriptor.entity_id.clone();
        if descriptor.capabilities.is_empty() {
            return Err(EntityError::NoCapabilities(id));
        }
        if let Some(existing) = self.records.get(&id) {
            if existing.status != EntityStatus::Offline {
                return Err(EntityError::Conflict(id));
            }
        }
        let status = if self.lease_of(&id).is_some() {
            EntityStatus::Controlled
        } else {
            EntityStatus::Online
        };
        let record = EntityRecord {
            entity_id: id.clone(),
            kind: descriptor.kind,
            location: descriptor.location,
            capabilities: descriptor.capabilities,
            status,
            last_heartbeat: now,
            busy: false,
            voice_label: descriptor.voice_label,
        };
        self.records.insert(id.clone(), record);
        Ok(&self.records[&id])
    }

    pub fn heartbeat(
        &mut self,
        entity_id: &str,
        location: &str,
        busy: bool,
        now: Millis,
    ) -> Result<HeartbeatOutcome, EntityError> {
        let leased = self.lease_of(entity_id).is_some();
        let record = self
            .records
            .get_mut(entity_id)
            .ok_or_else(|| EntityError::NotRegistered(entity_id.to_string()))?;
        record.last_heartbeat = record.last_heartbeat.max(now);
        record.busy = busy;
        let revived = record.status == EntityStatus::Offline;
        if revived {
            record.status = if leased {
                EntityStatus::Controlled
            } else {
                EntityStatus::Online
            };
        }
        let moved_to = (record.location != location).then(|| {
            record.location = location.to_string();
            record.location.clone()
        });
        Ok(HeartbeatOutcome { moved_to, revived })
    }

    /// Flips every entity whose last heartbeat is older than the timeout to
    /// offline and returns their ids.
    pub fn sweep(&mut self, now: Millis) -> Vec<EntityId> {
        let timeout = self.config.heartbeat_timeout_ms;
        let mut stale = Vec::new();
        for record in self.records.values_mut() {
            if record.status != EntityStatus::Offline && now - record.last_heartbeat > timeout {
                record.status = EntityStatus::Offline;
                stale.push(record.entity_id.clone());
            }
        }
        stale
    }

    pub fn acquire_control(
        &mut self,
        request_id: &str,
        entity_ids: &BTreeSet<EntityId>,
        now: Millis,
    ) -> Result<ControlLease, EntityError> {
        if entity_ids.is_empty() {
            return Err(EntityError::EmptyLease);
        }
        for id in entity_ids {
            let record = self
                .records
                .get(id)
                .ok_or_else(|| EntityError::NotRegistered(id.clone()))?;
            let reason = match record.status {
                EntityStatus::Offline => Some("offline".to_string()),
                EntityStatus::Controlled => Some(format!(
                    "leased to {}",
                    self.lease_of(id).map(|l| l.request_id.as_str()).unwrap_or("?")
                )),
                EntityStatus::Online => None,
            };
            if let Some(reason) = reason {
                return Err(EntityError::LeaseDenied {
                    blocker: id.clone(),
                    reason,
                });
            }
        }
        self.next_lease += 1;
        let lease = ControlLease {
            lease_id: format!("lease-{}", self.next_lease),
            request_id: request_id.to_string(),
            entity_ids: entity_ids.clone(),
            granted_at: now,
        };
        for id in entity_ids {
            if let Some(r) = self.records.get_mut(id) {
                r.status = EntityStatus::Controlled;
            }
        }
        self.leases.insert(lease.lease_id.clone(), lease.clone());
        Ok(lease)
    }

    /// Releases a lease. Unknown or already released leases are a no-op
    /// and yield `None`.
    pub fn release_control(&mut self, lease_id: &str) -> Option<ControlLease> {
        let lease = self.leases.remove(lease_id)?;
        for id in &lease.entity_ids {
            if let Some(r) = self.records.get_mut(id) {
                if r.status == EntityStatus::Controlled {
                    r.status = EntityStatus::Online;
                }
            }
        }
        Some(lease)
    }

    /// Hands back part of a lease. The lease disappears once it names no
    /// entity. Returns the entities actually released.
    pub fn release_entities(&mut self, lease_id: &str, entities: &BTreeSet<EntityId>) -> BTreeSet<EntityId> {
        let Some(lease) = self.leases.get_mut(lease_id) else {
            return BTreeSet::new();
        };
        let released: BTreeSet<EntityId> = lease.entity_ids.intersection(entities).cloned().collect();
        lease.entity_ids.retain(|e| !released.contains(e));
        if lease.entity_ids.is_empty() {
            self.leases.remove(lease_id);
        }
        for id in &released {
            if let Some(r) = self.records.get_mut(id) {
                if r.status == EntityStatus::Controlled {
                    r.status = EntityStatus::Online;
                }
            }
        }
        released
    }

    pub fn list_available(&self, capability: Option<CapabilityName>) -> Vec<&EntityRecord> {
        self.records
            .values()
            .filter(|r| r.status == EntityStatus::Online)
            .filter(|r| capability.is_none_or(|c| r.has(c)))
            .collect()
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.records.get(entity_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &EntityRecord> {
        self.records.values()
    }

    pub fn leases(&self) -> impl Iterator<Item = &ControlLease> {
        self.leases.values()
    }

    pub fn lease_of(&self, entity_id: &str) -> Option<&ControlLease> {
        self.leases.values().find(|l| l.entity_ids.contains(entity_id))
    }
}
