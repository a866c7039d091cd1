//! Weight files: a magic line, a one-line JSON manifest (layer specs plus
//! free-form metadata), then every array as a little-endian `u64` length
//! followed by that many little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::{BatchNorm, Layer, LayerSpec, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "JDNN 1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    layers: Vec<LayerSpec>,
    metadata: BTreeMap<String, String>,
}

pub type Metadata = BTreeMap<String, String>;

/// Writes several networks (e.g. a trunk and its heads) into one stream.
pub fn write_networks<W: Write>(mut w: W, nets: &[&Network], metadata: &Metadata) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    let manifests: Vec<Manifest> = nets
        .iter()
        .enumerate()
        .map(|(i, n)| Manifest {
            layers: n.specs(),
            metadata: if i == 0 { metadata.clone() } else { Metadata::new() },
        })
        .collect();
    writeln!(w, "{}", serde_json::to_string(&manifests)?)?;
    for net in nets {
        for layer in net.layers() {
            write_array(&mut w, layer.weight.data())?;
            write_array(&mut w, &layer.bias)?;
            if !layer.slope.is_empty() {
                write_array(&mut w, &layer.slope)?;
            }
            if let Some(bn) = &layer.bn {
                write_array(&mut w, &bn.gamma)?;
                write_array(&mut w, &bn.beta)?;
                write_array(&mut w, &bn.running_mean)?;
                write_array(&mut w, &bn.running_var)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_networks<R: Read>(r: R) -> Result<(Vec<Network>, Metadata)> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format("not a network weight file".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let manifests: Vec<Manifest> = serde_json::from_str(line.trim_end())?;
    let mut nets = Vec::with_capacity(manifests.len());
    let mut metadata = Metadata::new();
    for (i, m) in manifests.into_iter().enumerate() {
        if i == 0 {
            metadata = m.metadata;
        }
        let mut layers = Vec::with_capacity(m.layers.len());
        for spec in m.layers {
            let weight = Matrix::from_vec(spec.in_dim, spec.out_dim, read_array(&mut r)?)?;
            let bias = read_array(&mut r)?;
            let slope = if matches!(spec.activation, super::network::Activation::Prelu) {
                read_array(&mut r)?
            } else {
                Vec::new()
            };
            let bn = if spec.batch_norm {
                Some(BatchNorm {
                    gamma: read_array(&mut r)?,
                    beta: read_array(&mut r)?,
                    running_mean: read_array(&mut r)?,
                    running_var: read_array(&mut r)?,
                })
            } else {
                None
            };
            layers.push(Layer {
                spec,
                weight,
                bias,
                slope,
                bn,
            });
        }
        nets.push(Network::from_layers(layers)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((nets, metadata))
}

pub fn save_networks(path: &Path, nets: &[&Network], metadata: &Metadata) -> Result<()> {
    write_networks(BufWriter::new(File::create(path)?), nets, metadata)
}

pub fn load_networks(path: &Path) -> Result<(Vec<Network>, Metadata)> {
    let f = File::open(path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    read_networks(f)
}

fn write_array<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read>(r: &mut R) -> Result<Vec<f32>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated weight file".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Format(format!("implausible array length {len}")));
    }
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated weight file".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            LayerSpec::new(5, 7, Activation::Prelu).with_batch_norm(),
            LayerSpec::new(7, 3, Activation::LeakyRelu { slope: 1e-2 }),
            LayerSpec::new(3, 2, Activation::Softmax),
        ];
        let mut net = Network::new(&specs, &mut rng).unwrap();
        net.forward_train(&Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0, 5.0], [0.5, -1.0, 0.0, 1.0, 9.0]]).unwrap())
            .unwrap();
        let head = Network::new(&[LayerSpec::new(3, 1, Activation::Identity)], &mut rng).unwrap();
        let mut meta = Metadata::new();
        meta.insert("state_dim".into(), "5".into());
        let mut buf = Vec::new();
        write_networks(&mut buf, &[&net, &head], &meta).unwrap();
        let (nets, meta2) = read_networks(buf.as_slice()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(nets, vec![net.clone(), head]);
        for (a, b) in nets[0].params().iter().zip(net.params()) {
            let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let net = Network::zeroed(&[LayerSpec::new(2, 2, Activation::Identity)]).unwrap();
        let mut buf = Vec::new();
        write_networks(&mut buf, &[&net], &Metadata::new()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_networks(buf.as_slice()).is_err());
        assert!(read_networks(&b"garbage\n"[..]).is_err());
    }
}
