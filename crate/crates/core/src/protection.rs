//! First-order cost model for hardware memory protection.
//!
//! A profile adds a fixed per-request cost, a per-byte cost for traffic
//! through the memory encryption engine, and a paging penalty once the
//! protected footprint exceeds the enclave page cache. The cost is injected
//! as a busy-wait on top of the real work.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock;

pub const DEFAULT_PAGE_SIZE: u64 = 4096;
pub const DEFAULT_EPC_BYTES: u64 = 96 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionMode {
    Native,
    EnclaveLike,
    EncryptedVmLike,
}

impl ProtectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionMode::Native => "native",
            ProtectionMode::EnclaveLike => "enclave_like",
            ProtectionMode::EncryptedVmLike => "encrypted_vm_like",
        }
    }
}

impl fmt::Display for ProtectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtectionMode {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(ProtectionMode::Native),
            "enclave_like" => Ok(ProtectionMode::EnclaveLike),
            "encrypted_vm_like" => Ok(ProtectionMode::EncryptedVmLike),
            other => Err(ProfileError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown protection mode {0:?} (expected native, enclave_like or encrypted_vm_like)")]
    UnknownMode(String),
    #[error("page size must be positive")]
    ZeroPageSize,
    #[error("EPC capacity {capacity} is not a multiple of the page size {page}")]
    UnalignedCapacity { capacity: u64, page: u64 },
    #[error("the protection profile is fixed once a run has started")]
    Sealed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionProfile {
    pub mode: ProtectionMode,
    pub per_call_ns: u64,
    pub per_byte_ns: u64,
    pub epc_capacity_bytes: u64,
    pub page_size_bytes: u64,
    pub page_fault_penalty_ns: u64,
}

/// Optional replacements for a preset's cost parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProfileOverrides {
    pub per_call_ns: Option<u64>,
    pub per_byte_ns: Option<u64>,
    pub epc_capacity_bytes: Option<u64>,
    pub page_fault_penalty_ns: Option<u64>,
}

impl ProtectionProfile {
    pub fn new(
        mode: ProtectionMode,
        per_call_ns: u64,
        per_byte_ns: u64,
        epc_capacity_bytes: u64,
        page_size_bytes: u64,
        page_fault_penalty_ns: u64,
    ) -> Result<Self, ProfileError> {
        if page_size_bytes == 0 {
            return Err(ProfileError::ZeroPageSize);
        }
        if !epc_capacity_bytes.is_multiple_of(page_size_bytes) {
            return Err(ProfileError::UnalignedCapacity {
                capacity: epc_capacity_bytes,
                page: page_size_bytes,
            });
        }
        let profile = ProtectionProfile {
            mode,
            per_call_ns,
            per_byte_ns,
            epc_capacity_bytes,
            page_size_bytes,
            page_fault_penalty_ns,
        };
        Ok(if mode == ProtectionMode::Native {
            ProtectionProfile {
                per_call_ns: 0,
                per_byte_ns: 0,
                page_fault_penalty_ns: 0,
                ..profile
            }
        } else {
            profile
        })
    }

    pub fn native() -> Self {
        ProtectionProfile {
            mode: ProtectionMode::Native,
            per_call_ns: 0,
            per_byte_ns: 0,
            epc_capacity_bytes: DEFAULT_EPC_BYTES,
            page_size_bytes: DEFAULT_PAGE_SIZE,
            page_fault_penalty_ns: 0,
        }
    }

    /// Placeholder defaults; calibrate against real hardware before drawing conclusions.
    pub fn enclave_like() -> Self {
        ProtectionProfile {
            mode: ProtectionMode::EnclaveLike,
            per_call_ns: 2000,
            per_byte_ns: 10,
            epc_capacity_bytes: DEFAULT_EPC_BYTES,
            page_size_bytes: DEFAULT_PAGE_SIZE,
            page_fault_penalty_ns: 25_000,
        }
    }

    /// Whole-VM encryption has no page cache limit, only a cheaper per-byte cost.
    pub fn encrypted_vm_like() -> Self {
        ProtectionProfile {
            mode: ProtectionMode::EncryptedVmLike,
            per_call_ns: 500,
            per_byte_ns: 2,
            epc_capacity_bytes: u64::MAX - u64::MAX % DEFAULT_PAGE_SIZE,
            page_size_bytes: DEFAULT_PAGE_SIZE,
            page_fault_penalty_ns: 0,
        }
    }

    pub fn preset(mode: ProtectionMode) -> Self {
        match mode {
            ProtectionMode::Native => Self::native(),
            ProtectionMode::EnclaveLike => Self::enclave_like(),
            ProtectionMode::EncryptedVmLike => Self::encrypted_vm_like(),
        }
    }

    pub fn with_overrides(self, o: ProfileOverrides) -> Result<Self, ProfileError> {
        Self::new(
            self.mode,
            o.per_call_ns.unwrap_or(self.per_call_ns),
            o.per_byte_ns.unwrap_or(self.per_byte_ns),
            o.epc_capacity_bytes.unwrap_or(self.epc_capacity_bytes),
            self.page_size_bytes,
            o.page_fault_penalty_ns.unwrap_or(self.page_fault_penalty_ns),
        )
    }

    /// Emulated cost of one request moving `request_bytes` while
    /// `resident_protected_bytes` are held in protected memory.
    pub fn overhead_ns(&self, request_bytes: u64, resident_protected_bytes: u64) -> u64 {
        self.call_ns(request_bytes).saturating_add(
            self.page_fault_penalty_ns
                .saturating_mul(self.faulted_pages(request_bytes, resident_protected_bytes)),
        )
    }

    /// Per-call plus per-byte cost, without paging.
    pub fn call_ns(&self, request_bytes: u64) -> u64 {
        if self.mode == ProtectionMode::Native {
            return 0;
        }
        self.per_call_ns
            .saturating_add(self.per_byte_ns.saturating_mul(request_bytes))
    }

    /// Pages the request faults in: all of its pages once resident memory
    /// exceeds capacity, none before.
    pub fn faulted_pages(&self, request_bytes: u64, resident_protected_bytes: u64) -> u64 {
        if self.mode == ProtectionMode::Native || resident_protected_bytes <= self.epc_capacity_bytes {
            return 0;
        }
        request_bytes.div_ceil(self.page_size_bytes)
    }
}

impl Default for ProtectionProfile {
    fn default() -> Self {
        Self::native()
    }
}

/// Applies a profile to live requests. The profile can be swapped only
/// until the first request has been charged.
#[derive(Debug)]
pub struct ProtectionGate {
    profile: ProtectionProfile,
    sealed: bool,
    charged_ns: u64,
}

impl ProtectionGate {
    pub fn new(profile: ProtectionProfile) -> Self {
        ProtectionGate {
            profile,
            sealed: false,
            charged_ns: 0,
        }
    }

    pub fn profile(&self) -> &ProtectionProfile {
        &self.profile
    }

    pub fn reconfigure(&mut self, profile: ProtectionProfile) -> Result<(), ProfileError> {
        if self.sealed {
            return Err(ProfileError::Sealed);
        }
        self.profile = profile;
        Ok(())
    }

    /// Busy-waits for the request's overhead and returns it.
    ///
    /// Each faulted page is its own wait, the way each fault is its own trap.
    pub fn apply(&mut self, request_bytes: u64, resident_protected_bytes: u64) -> u64 {
        self.sealed = true;
        let p = &self.profile;
        clock::spin_for_ns(p.call_ns(request_bytes));
        for _ in 0..p.faulted_pages(request_bytes, resident_protected_bytes) {
            clock::spin_for_ns(p.page_fault_penalty_ns);
        }
        let ns = p.overhead_ns(request_bytes, resident_protected_bytes);
        self.charged_ns += ns;
        ns
    }

    /// Total delay injected so far.
    pub fn charged_ns(&self) -> u64 {
        self.charged_ns
    }
}
