//! Self-describing checkpoint archives.
//!
//! Layout: an 8-byte magic, a little-endian u64 JSON header length, the JSON
//! header (config, counters, RNG state, tensor table), then each tensor's
//! raw little-endian f32 bits in header order. Bit patterns round-trip
//! exactly, so save -> load -> save is byte-identical and a resumed run
//! reproduces the uninterrupted loss trajectory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::networks::{init_discriminator, init_generator, ArchDescriptor};
use crate::optim::Adam;
use crate::trainer::{ModelState, TrainConfig};

const MAGIC: &[u8; 8] = b"BAGECKP1";

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos_hi: u64,
    word_pos_lo: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    gen_updates: u64,
    cycle_pos: u64,
    opt_g_iterations: u64,
    opt_d_iterations: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

fn rng_state(rng: &ChaCha12Rng) -> RngState {
    let pos = rng.get_word_pos();
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos_hi: (pos >> 64) as u64,
        word_pos_lo: pos as u64,
    }
}

fn restore_rng(state: &RngState) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(((state.word_pos_hi as u128) << 64) | state.word_pos_lo as u128);
    rng
}

/// Every tensor of a state in fixed order: generator, discriminator, then
/// optimizer moments.
fn tensor_table(state: &ModelState) -> Vec<(String, ndarray::ArrayD<crate::Elem>)> {
    let mut out = Vec::new();
    for (name, t) in state.generator.tensors() {
        out.push((format!("g.{name}"), t.clone()));
    }
    for (name, t) in state.discriminator.tensors() {
        out.push((format!("d.{name}"), t.clone()));
    }
    for (prefix, opt) in [("opt_g", &state.opt_g), ("opt_d", &state.opt_d)] {
        for (i, m) in opt.m.iter().enumerate() {
            out.push((format!("{prefix}.m{i}"), m.clone()));
        }
        for (i, v) in opt.v.iter().enumerate() {
            out.push((format!("{prefix}.v{i}"), v.clone()));
        }
    }
    out
}

pub fn save(path: &Path, state: &ModelState) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let table = tensor_table(state);
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        gen_updates: state.gen_updates,
        cycle_pos: state.cycle_pos,
        opt_g_iterations: state.opt_g.iterations,
        opt_d_iterations: state.opt_d.iterations,
        rng: rng_state(&state.rng),
        tensors: table
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::parse("checkpoint header", e))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64)
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&header_bytes).map_err(|e| Error::io(path, e))?;
    for (_, t) in &table {
        let std_layout = t.as_standard_layout();
        for &v in std_layout.as_slice().expect("standard layout") {
            w.write_u32::<LittleEndian>(v.to_bits())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let header_len = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse("checkpoint header", e))?;

    // Rebuild the skeleton from the stored config, then overwrite tensors.
    let mut generator = init_generator(&header.config.arch, 0)
        .map_err(|e| Error::Checkpoint(format!("stored architecture invalid: {e}")))?;
    let mut discriminator = init_discriminator(&header.config.arch, 0)
        .map_err(|e| Error::Checkpoint(format!("stored architecture invalid: {e}")))?;
    let mut opt_g = Adam::new(header.config.optimizer, &generator.tensors());
    let mut opt_d = Adam::new(header.config.optimizer, &discriminator.tensors());
    opt_g.iterations = header.opt_g_iterations;
    opt_d.iterations = header.opt_d_iterations;

    let expected: Vec<(String, Vec<usize>)> = {
        let mut names = Vec::new();
        for (name, t) in generator.tensors() {
            names.push((format!("g.{name}"), t.shape().to_vec()));
        }
        for (name, t) in discriminator.tensors() {
            names.push((format!("d.{name}"), t.shape().to_vec()));
        }
        for (prefix, opt) in [("opt_g", &opt_g), ("opt_d", &opt_d)] {
            for (i, m) in opt.m.iter().enumerate() {
                names.push((format!("{prefix}.m{i}"), m.shape().to_vec()));
            }
            for (i, v) in opt.v.iter().enumerate() {
                names.push((format!("{prefix}.v{i}"), v.shape().to_vec()));
            }
        }
        names
    };
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor table mismatch: expected {} tensors, found {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if name != &entry.name || shape != &entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor table mismatch at {name}: archive has {} {:?}",
                entry.name, entry.shape
            )));
        }
    }

    let mut read_into = |t: &mut ndarray::ArrayD<crate::Elem>| -> Result<()> {
        for v in t.iter_mut() {
            let bits = r
                .read_u32::<LittleEndian>()
                .map_err(|e| Error::io(path, e))?;
            *v = f32::from_bits(bits);
        }
        Ok(())
    };
    for t in generator.tensors_mut() {
        read_into(t)?;
    }
    for t in discriminator.tensors_mut() {
        read_into(t)?;
    }
    for opt in [&mut opt_g, &mut opt_d] {
        for m in opt.m.iter_mut() {
            read_into(m)?;
        }
        for v in opt.v.iter_mut() {
            read_into(v)?;
        }
    }

    Ok(ModelState {
        rng: restore_rng(&header.rng),
        config: header.config,
        generator,
        discriminator,
        opt_g,
        opt_d,
        step: header.step,
        gen_updates: header.gen_updates,
        cycle_pos: header.cycle_pos,
    })
}

/// Load a checkpoint and require its architecture to match `expected`.
pub fn load_with_arch(path: &Path, expected: &ArchDescriptor) -> Result<ModelState> {
    let state = load(path)?;
    if &state.config.arch != expected {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint has {:?}, expected {:?}",
            state.config.arch, expected
        )));
    }
    Ok(state)
}
