//! Binary net file format.
//!
//! Layout (all integers and floats little-endian):
//!   magic "PWRCPNET" | version u32 | layer count u32
//!   per layer: in_dim u32 | out_dim u32 | activation u8
//!              | weights (out*in f64, row-major) | biases (out f64)
//!   input normalization:  width u32 | means | scales (f64 each)
//!   output normalization: width u32 | means | scales
//!
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{Activation, FeatureNorm, Layer, NeuralNet};

const MAGIC: &[u8; 8] = b"PWRCPNET";
const VERSION: u32 = 1;

fn act_to_byte(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Identity => 2,
    }
}

fn act_from_byte(b: u8) -> Result<Activation> {
    match b {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Identity),
        other => Err(Error::Parse(format!("unknown activation byte {other}"))),
    }
}

pub fn save(net: &NeuralNet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for layer in &net.layers {
        w.write_all(&(layer.in_dim as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim as u32).to_le_bytes())?;
        w.write_all(&[act_to_byte(layer.activation)])?;
        for v in &layer.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &layer.biases {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for norm in [&net.input_norm, &net.output_norm] {
        w.write_all(&(norm.len() as u32).to_le_bytes())?;
        for v in &norm.mean {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &norm.scale {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut buf = [0u8; 1];
        self.exact(&mut buf)?;
        Ok(buf[0])
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            self.exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Parse("unexpected end of net file".into()))
    }
}

pub fn load(path: &Path) -> Result<NeuralNet> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let mut magic = [0u8; 8];
    r.exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad magic, not a net file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            got: version,
        });
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Parse(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        if in_dim == 0 || out_dim == 0 || in_dim > 4096 || out_dim > 4096 {
            return Err(Error::Parse(format!(
                "implausible layer dims {in_dim}x{out_dim}"
            )));
        }
        let activation = act_from_byte(r.u8()?)?;
        let weights = r.f64_vec(in_dim * out_dim)?;
        let biases = r.f64_vec(out_dim)?;
        layers.push(Layer::new(in_dim, out_dim, weights, biases, activation)?);
    }
    let mut norms = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.u32()? as usize;
        let mean = r.f64_vec(n)?;
        let scale = r.f64_vec(n)?;
        norms.push(FeatureNorm { mean, scale });
    }
    let output_norm = norms.pop().unwrap();
    let input_norm = norms.pop().unwrap();
    NeuralNet::from_layers(layers, input_norm, output_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = NeuralNet::glorot(&[6, 32, 32, 1], Activation::Tanh, 11);
        save(&net, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(net, back);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = back.forward(&x).unwrap();
            assert_eq!(a, b, "forward outputs must be bit-identical");
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = NeuralNet::glorot(&[3, 8, 1], Activation::Tanh, 2);
        save(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load(&path) {
            Err(Error::Parse(_)) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = NeuralNet::glorot(&[3, 8, 1], Activation::Tanh, 2);
        save(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field follows the 8-byte magic
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::VersionMismatch { got: 99, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn garbage_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        std::fs::write(&path, b"not a net file at all").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));
    }
}
