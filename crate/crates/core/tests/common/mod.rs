#![allow(dead_code)]

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use cpm_core::llm::{Gateway, OracleMock, OracleWorld, ResponseCache};
use cpm_core::search::RunMeta;

pub fn oracle_gateway(world: &OracleWorld) -> Gateway {
    let backend = OracleMock::new(world.clone(), 0.0, 0).expect("oracle");
    Gateway::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()))
}

pub fn meta(run_id: &str, round_index: u32) -> RunMeta {
    RunMeta {
        run_id: run_id.to_string(),
        round_index,
        created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    }
}
