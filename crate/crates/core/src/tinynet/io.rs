//! Checkpoint format: one line of JSON header, then every parameter as a
//! little-endian `f64` in layer order (weights row-major, then bias).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Activation, Mlp};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: usize,
}

pub fn save(net: &Mlp, path: &Path) -> Result<()> {
    let header = Header {
        format: "tinynet".into(),
        version: FORMAT_VERSION,
        widths: net.widths(),
        hidden: net.hidden_activation(),
        output: net.output_activation(),
        params: net.num_params(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in net.params_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.format != "tinynet" || header.version != FORMAT_VERSION {
        return Err(Error::Structure(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    let mut net = Mlp::zeros(&header.widths, header.hidden, header.output);
    if net.num_params() != header.params {
        return Err(Error::Shape { expected: net.num_params(), got: header.params });
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != header.params * 8 {
        return Err(Error::Shape { expected: header.params * 8, got: bytes.len() });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    net.set_params_flat(&flat)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[7, 64, 512, 3], Activation::Relu, Activation::Sigmoid, &mut rng);
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = Mlp::zeros(&[2, 3, 1], Activation::Relu, Activation::Identity);
        save(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(&path).is_err());
    }
}
