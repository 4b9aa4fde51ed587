//! Versioned binary checkpoints for networks and optimizer state.
//!
//! Network layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"CSNNET01"
//! u32    layer count
//! per layer: u32 input width, u32 output width, u8 activation tag,
//!            f64 dropout rate, u8 batch-norm flag
//! per layer: weights (row-major f64), bias,
//!            then gamma, beta, running mean, running var when batch-norm
//! ```
//!
//! Adam state uses magic `b"CSADAM01"`, the hyperparameters, the step
//! counter, and first/second moments in the same per-layer order.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::adam::LayerMoments;
use super::{Activation, AdamState, BatchNormParams, Layer, LayerSpec, Network, NetworkError};

const NETWORK_MAGIC: &[u8; 8] = b"CSNNET01";
const ADAM_MAGIC: &[u8; 8] = b"CSADAM01";

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Rectifier => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation, NetworkError> {
    match tag {
        0 => Ok(Activation::Rectifier),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Identity),
        other => Err(NetworkError::Checkpoint(format!(
            "unknown activation tag {other}"
        ))),
    }
}

pub fn save_network<W: Write>(writer: &mut W, network: &Network) -> Result<(), NetworkError> {
    writer.write_all(NETWORK_MAGIC)?;
    writer.write_all(&(network.specs().len() as u32).to_le_bytes())?;
    for spec in network.specs() {
        writer.write_all(&(spec.input_width as u32).to_le_bytes())?;
        writer.write_all(&(spec.output_width as u32).to_le_bytes())?;
        writer.write_all(&[activation_tag(spec.activation)])?;
        writer.write_all(&spec.dropout_rate.to_le_bytes())?;
        writer.write_all(&[u8::from(spec.batch_norm)])?;
    }
    for layer in network.layers() {
        write_array2(writer, &layer.weights)?;
        write_array1(writer, &layer.bias)?;
        if let Some(bn) = &layer.batch_norm {
            write_array1(writer, &bn.gamma)?;
            write_array1(writer, &bn.beta)?;
            write_array1(writer, &bn.running_mean)?;
            write_array1(writer, &bn.running_var)?;
        }
    }
    Ok(())
}

pub fn load_network<R: Read>(reader: &mut R) -> Result<Network, NetworkError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(NetworkError::Checkpoint("bad network magic".into()));
    }
    let layer_count = read_u32(reader)? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let input_width = read_u32(reader)? as usize;
        let output_width = read_u32(reader)? as usize;
        let activation = activation_from_tag(read_u8(reader)?)?;
        let dropout_rate = read_f64(reader)?;
        let batch_norm = read_u8(reader)? != 0;
        specs.push(LayerSpec {
            input_width,
            output_width,
            activation,
            dropout_rate,
            batch_norm,
        });
    }
    let mut layers = Vec::with_capacity(layer_count);
    for spec in &specs {
        let weights = read_array2(reader, spec.input_width, spec.output_width)?;
        let bias = read_array1(reader, spec.output_width)?;
        let batch_norm = if spec.batch_norm {
            Some(BatchNormParams {
                gamma: read_array1(reader, spec.output_width)?,
                beta: read_array1(reader, spec.output_width)?,
                running_mean: read_array1(reader, spec.output_width)?,
                running_var: read_array1(reader, spec.output_width)?,
            })
        } else {
            None
        };
        layers.push(Layer {
            weights,
            bias,
            batch_norm,
        });
    }
    Ok(Network::from_parts(specs, layers))
}

pub fn save_adam<W: Write>(writer: &mut W, state: &AdamState) -> Result<(), NetworkError> {
    writer.write_all(ADAM_MAGIC)?;
    writer.write_all(&state.learning_rate.to_le_bytes())?;
    writer.write_all(&state.beta1.to_le_bytes())?;
    writer.write_all(&state.beta2.to_le_bytes())?;
    writer.write_all(&state.epsilon.to_le_bytes())?;
    writer.write_all(&state.step.to_le_bytes())?;
    writer.write_all(&(state.moments.len() as u32).to_le_bytes())?;
    for m in &state.moments {
        write_array2(writer, &m.weights_m)?;
        write_array2(writer, &m.weights_v)?;
        write_array1(writer, &m.bias_m)?;
        write_array1(writer, &m.bias_v)?;
        writer.write_all(&[u8::from(m.bn_m.is_some())])?;
        if let (Some(bn_m), Some(bn_v)) = (&m.bn_m, &m.bn_v) {
            write_array1(writer, &bn_m.0)?;
            write_array1(writer, &bn_m.1)?;
            write_array1(writer, &bn_v.0)?;
            write_array1(writer, &bn_v.1)?;
        }
    }
    Ok(())
}

/// Loads Adam state shaped for `network`; the shapes in the file must match.
pub fn load_adam<R: Read>(reader: &mut R, network: &Network) -> Result<AdamState, NetworkError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != ADAM_MAGIC {
        return Err(NetworkError::Checkpoint("bad optimizer magic".into()));
    }
    let learning_rate = read_f64(reader)?;
    let beta1 = read_f64(reader)?;
    let beta2 = read_f64(reader)?;
    let epsilon = read_f64(reader)?;
    let step = read_u64(reader)?;
    let count = read_u32(reader)? as usize;
    if count != network.layers().len() {
        return Err(NetworkError::Checkpoint(
            "optimizer layer count does not match network".into(),
        ));
    }
    let mut moments = Vec::with_capacity(count);
    for layer in network.layers() {
        let (rows, cols) = layer.weights.dim();
        let weights_m = read_array2(reader, rows, cols)?;
        let weights_v = read_array2(reader, rows, cols)?;
        let bias_m = read_array1(reader, layer.bias.len())?;
        let bias_v = read_array1(reader, layer.bias.len())?;
        let has_bn = read_u8(reader)? != 0;
        if has_bn != layer.batch_norm.is_some() {
            return Err(NetworkError::Checkpoint(
                "optimizer batch-norm layout does not match network".into(),
            ));
        }
        let (bn_m, bn_v) = if has_bn {
            let width = layer.bias.len();
            let m = (read_array1(reader, width)?, read_array1(reader, width)?);
            let v = (read_array1(reader, width)?, read_array1(reader, width)?);
            (Some(m), Some(v))
        } else {
            (None, None)
        };
        moments.push(LayerMoments {
            weights_m,
            weights_v,
            bias_m,
            bias_v,
            bn_m,
            bn_v,
        });
    }
    Ok(AdamState {
        learning_rate,
        beta1,
        beta2,
        epsilon,
        step,
        moments,
    })
}

fn write_array1<W: Write>(writer: &mut W, array: &Array1<f64>) -> Result<(), NetworkError> {
    for v in array {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_array2<W: Write>(writer: &mut W, array: &Array2<f64>) -> Result<(), NetworkError> {
    for v in array.iter() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array1<R: Read>(reader: &mut R, len: usize) -> Result<Array1<f64>, NetworkError> {
    let mut out = Array1::zeros(len);
    for v in out.iter_mut() {
        *v = read_f64(reader)?;
    }
    Ok(out)
}

fn read_array2<R: Read>(
    reader: &mut R,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, NetworkError> {
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = read_f64(reader)?;
    }
    Ok(out)
}

fn read_u8<R: Read>(reader: &mut R) -> Result<u8, NetworkError> {
    let mut buf = [0u8; 1];
    reader.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32, NetworkError> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(reader: &mut R) -> Result<u64, NetworkError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(reader: &mut R) -> Result<f64, NetworkError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{adam_step, Gradients, Mode};
    use ndarray::Array2;

    fn sample_network() -> Network {
        let specs = vec![
            LayerSpec::new(3, 12, Activation::Rectifier)
                .with_batch_norm()
                .with_dropout(0.5),
            LayerSpec::new(12, 4, Activation::Rectifier),
            LayerSpec::new(4, 1, Activation::Tanh),
        ];
        Network::new(specs, 55).unwrap()
    }

    #[test]
    fn network_checkpoint_round_trips() {
        let mut net = sample_network();
        // Touch the running statistics so they carry real state.
        net.set_mode(Mode::Training);
        let batch = Array2::from_shape_fn((8, 3), |(i, j)| (i as f64 - j as f64) * 0.25);
        net.forward(&batch).unwrap();
        net.set_mode(Mode::Inference);

        let mut buf = Vec::new();
        save_network(&mut buf, &net).unwrap();
        let loaded = load_network(&mut buf.as_slice()).unwrap();

        assert_eq!(loaded.specs(), net.specs());
        for idx in 0..net.parameter_count() {
            assert_eq!(loaded.parameter(idx), net.parameter(idx));
        }
        let probe = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.1);
        assert_eq!(loaded.infer(&probe).unwrap(), net.infer(&probe).unwrap());
    }

    #[test]
    fn adam_checkpoint_round_trips() {
        let mut net = sample_network();
        net.set_mode(Mode::Training);
        let mut state = AdamState::new(&net, 1e-3);
        let batch = Array2::from_shape_fn((8, 3), |(i, j)| (i as f64 - j as f64) * 0.25);
        for _ in 0..3 {
            let out = net.forward(&batch).unwrap();
            let grads: Gradients = net.backward(&out).unwrap().gradients;
            adam_step(&mut net, &grads, &mut state).unwrap();
        }

        let mut buf = Vec::new();
        save_adam(&mut buf, &state).unwrap();
        let loaded = load_adam(&mut buf.as_slice(), &net).unwrap();
        assert_eq!(loaded, state);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let buf = b"NOTMAGIC".to_vec();
        assert!(matches!(
            load_network(&mut buf.as_slice()),
            Err(NetworkError::Checkpoint(_))
        ));
    }
}
