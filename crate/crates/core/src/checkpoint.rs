//! Checkpoint directory: `model.cfg` (model keys of the run config),
//! `manifest.json` plus `params.bin` (tensor tree), and `routing.rret` when
//! the model has RRE layers.

use std::path::Path;

use crate::config::{model_config_text, parse_model_config};
use crate::error::Result;
use crate::model::Model;
use crate::routing::RoutingTable;
use crate::tensor::{read_tree, write_tree};

pub const MODEL_FILE: &str = "model.cfg";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const ROUTING_FILE: &str = "routing.rret";

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MODEL_FILE), model_config_text(&model.config))?;
    write_tree(&model.params, &dir.join(MANIFEST_FILE), &dir.join(PARAMS_FILE))?;
    let routing = dir.join(ROUTING_FILE);
    match &model.routing {
        Some(table) => table.save(&routing)?,
        None if routing.exists() => std::fs::remove_file(&routing)?,
        None => {}
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let config = parse_model_config(&std::fs::read_to_string(dir.join(MODEL_FILE))?)?;
    let params = read_tree(&dir.join(MANIFEST_FILE), &dir.join(PARAMS_FILE))?;
    let routing_path = dir.join(ROUTING_FILE);
    let routing = if routing_path.exists() {
        Some(RoutingTable::load(&routing_path)?)
    } else {
        None
    };
    Model::from_parts(config, params, routing)
}
