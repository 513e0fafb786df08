//! Lease-based service registry.
//!
//! Processes register the fabric address of their container under a service
//! name and keep the record alive by renewing its lease. A periodic evictor
//! marks lapsed records `Expired`; expired records stay visible in dumps until
//! the same instance registers again, but are never handed out by `lookup`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netfabric::NetAddress;
use crate::time::{SimDuration, VirtualTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("endpoint {0} was not allocated by the fabric")]
    InvalidEndpoint(NetAddress),
    #[error("{service}/{instance} is not registered")]
    NotRegistered { service: String, instance: String },
    #[error("no live instance of service {0}")]
    NotFound(String),
}

/// Answers whether an address is currently handed out by the network fabric.
pub trait AddressBook {
    fn is_allocated(&self, addr: NetAddress) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    #[serde(rename = "lease_duration_us")]
    pub lease_duration: SimDuration,
    #[serde(rename = "evict_period_us")]
    pub evict_period: SimDuration,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            lease_duration: SimDuration::from_secs(30),
            evict_period: SimDuration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceStatus {
    Up,
    Expired,
}

impl fmt::Display for ServiceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceStatus::Up => f.write_str("Up"),
            ServiceStatus::Expired => f.write_str("Expired"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub duration: SimDuration,
    pub renewed_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub service_name: String,
    pub instance_id: String,
    pub endpoint: NetAddress,
    pub registered_at: VirtualTime,
    pub lease_expiry: VirtualTime,
    pub status: ServiceStatus,
    pub renewed_count: u64,
}

impl ServiceRecord {
    pub fn is_live(&self, now: VirtualTime) -> bool {
        self.status == ServiceStatus::Up && self.lease_expiry > now
    }

    /// `service_name instance_id endpoint status lease_expiry`
    pub fn dump_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.service_name, self.instance_id, self.endpoint, self.status, self.lease_expiry
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    config: RegistryConfig,
    records: BTreeMap<(String, String), ServiceRecord>,
    cursors: HashMap<String, usize>,
}

impl Registry {
    pub fn new(config: RegistryConfig) -> Self {
        Registry {
            config,
            records: BTreeMap::new(),
            cursors: HashMap::new(),
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    fn lease(&self, rec: &ServiceRecord) -> Lease {
        Lease {
            duration: self.config.lease_duration,
            renewed_count: rec.renewed_count,
        }
    }

    /// Store or replace the record for `(service_name, instance_id)`.
    pub fn register(
        &mut self,
        service_name: &str,
        instance_id: &str,
        endpoint: NetAddress,
        now: VirtualTime,
        book: &impl AddressBook,
    ) -> Result<Lease, RegistryError> {
        if !book.is_allocated(endpoint) {
            return Err(RegistryError::InvalidEndpoint(endpoint));
        }
        let rec = ServiceRecord {
            service_name: service_name.to_string(),
            instance_id: instance_id.to_string(),
            endpoint,
            registered_at: now,
            lease_expiry: now + self.config.lease_duration,
            status: ServiceStatus::Up,
            renewed_count: 0,
        };
        let lease = self.lease(&rec);
        self.records
            .insert((service_name.to_string(), instance_id.to_string()), rec);
        Ok(lease)
    }

    pub fn renew(
        &mut self,
        service_name: &str,
        instance_id: &str,
        now: VirtualTime,
    ) -> Result<Lease, RegistryError> {
        let duration = self.config.lease_duration;
        let rec = self
            .records
            .get_mut(&(service_name.to_string(), instance_id.to_string()))
            .filter(|r| r.status == ServiceStatus::Up)
            .ok_or_else(|| RegistryError::NotRegistered {
                service: service_name.to_string(),
                instance: instance_id.to_string(),
            })?;
        rec.lease_expiry = now + duration;
        rec.renewed_count += 1;
        Ok(Lease {
            duration,
            renewed_count: rec.renewed_count,
        })
    }

    /// Round-robin pick among live instances, ordered by instance id.
    pub fn lookup(
        &mut self,
        service_name: &str,
        now: VirtualTime,
    ) -> Result<NetAddress, RegistryError> {
        let live: Vec<NetAddress> = self
            .instances(service_name)
            .filter(|r| r.is_live(now))
            .map(|r| r.endpoint)
            .collect();
        if live.is_empty() {
            return Err(RegistryError::NotFound(service_name.to_string()));
        }
        let cursor = self.cursors.entry(service_name.to_string()).or_insert(0);
        let pick = live[*cursor % live.len()];
        *cursor = cursor.wrapping_add(1);
        Ok(pick)
    }

    /// Remove the record. True iff it was `Up`.
    pub fn deregister(&mut self, service_name: &str, instance_id: &str) -> bool {
        self.records
            .remove(&(service_name.to_string(), instance_id.to_string()))
            .is_some_and(|r| r.status == ServiceStatus::Up)
    }

    /// Mark every `Up` record whose lease has run out as `Expired`.
    pub fn evict_expired(&mut self, now: VirtualTime) -> Vec<(String, String)> {
        let mut evicted = Vec::new();
        for ((name, inst), rec) in self.records.iter_mut() {
            if rec.status == ServiceStatus::Up && rec.lease_expiry <= now {
                rec.status = ServiceStatus::Expired;
                evicted.push((name.clone(), inst.clone()));
            }
        }
        evicted
    }

    pub fn get(&self, service_name: &str, instance_id: &str) -> Option<&ServiceRecord> {
        self.records
            .get(&(service_name.to_string(), instance_id.to_string()))
    }

    pub fn instances<'a>(
        &'a self,
        service_name: &'a str,
    ) -> impl Iterator<Item = &'a ServiceRecord> + 'a {
        self.records
            .values()
            .filter(move |r| r.service_name == service_name)
    }

    pub fn records(&self) -> impl Iterator<Item = &ServiceRecord> {
        self.records.values()
    }

    pub fn snapshot(&self) -> Vec<ServiceRecord> {
        self.records.values().cloned().collect()
    }
}
