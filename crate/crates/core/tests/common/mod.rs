#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anchor_core::gateway::mock::HashEmbedder;
use anchor_core::gateway::world::ScriptedWorld;
use anchor_core::gateway::{ChatProvider, Gateway, GatewayOptions};
use anchor_core::harness::dataset::{load_dataset, Dataset, DatasetKind};
use anchor_core::PipelineConfig;

pub const EMBED_DIM: usize = 64;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_config() -> PipelineConfig {
    PipelineConfig::long_context()
}

pub fn golden_world() -> ScriptedWorld {
    ScriptedWorld::load(&fixture("golden_world.json")).unwrap()
}

pub fn golden_dataset() -> Dataset {
    load_dataset(&fixture("golden_pairwise.jsonl"), DatasetKind::Pairwise).unwrap()
}

pub fn gateway_with(chat: Arc<dyn ChatProvider>, config: &PipelineConfig) -> Gateway {
    let options = GatewayOptions::from_config(config).unwrap();
    Gateway::new(chat, Arc::new(HashEmbedder::new(EMBED_DIM)), options)
}

pub fn golden_gateway(config: &PipelineConfig) -> Gateway {
    gateway_with(Arc::new(golden_world()), config)
}
