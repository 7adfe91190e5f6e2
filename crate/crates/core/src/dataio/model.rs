use std::io::{Read, Write};

use super::binary::{read_f64, read_f64_vec, read_u32, read_u64, write_f64s, ArtifactHeader};
use crate::durmodel::{DurationModel, DurationModelConfig, Layout};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"DPRD";
pub const MODEL_VERSION: u32 = 1;

/// Writes `DPRD` v1.
///
/// After the header come the hyperparameters: `codebook_size`, `embed_dim`,
/// `filter_size` and `kernel_size` as `u32`; `dropout_rate`,
/// `learning_rate`, `adam_beta1`, `adam_beta2` and `adam_eps` as `f64`;
/// `epochs` and `batch_utterances` as `u32`; `seed` as `u64`;
/// `max_duration` as `u32`. Then every parameter as `f64`, in this order:
/// embedding `K x E`, conv1 weight `F x kernel x E`, conv1 bias, ln1 gain,
/// ln1 bias, conv2 weight `F x kernel x F`, conv2 bias, ln2 gain, ln2 bias,
/// projection weight `F`, projection bias.
pub fn store_model<W: Write + ?Sized>(m: &DurationModel, sink: &mut W) -> Result<usize> {
    let c = m.config();
    let mut n = ArtifactHeader { magic: MODEL_MAGIC, version: MODEL_VERSION }.write(sink)?;
    let u32s = |w: &mut W, xs: &[usize]| -> Result<usize> {
        for &x in xs {
            let v = u32::try_from(x).map_err(|_| Error::validation(format!("{x} does not fit in u32")))?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(4 * xs.len())
    };
    n += u32s(sink, &[c.codebook_size, c.embed_dim, c.filter_size, c.kernel_size])?;
    n += write_f64s(sink, &[c.dropout_rate, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps])?;
    n += u32s(sink, &[c.epochs, c.batch_utterances])?;
    sink.write_all(&c.seed.to_le_bytes())?;
    n += 8;
    n += u32s(sink, &[c.max_duration as usize])?;
    n += write_f64s(sink, m.params())?;
    Ok(n)
}

pub fn load_model<R: Read + ?Sized>(source: &mut R) -> Result<DurationModel> {
    ArtifactHeader::read_expect(source, MODEL_MAGIC, MODEL_VERSION)?;
    let mut u = |what| read_u32(source, what).map(|v| v as usize);
    let codebook_size = u("codebook size")?;
    let embed_dim = u("embedding size")?;
    let filter_size = u("filter size")?;
    let kernel_size = u("kernel size")?;
    let dropout_rate = read_f64(source, "dropout rate")?;
    let learning_rate = read_f64(source, "learning rate")?;
    let adam_beta1 = read_f64(source, "adam beta1")?;
    let adam_beta2 = read_f64(source, "adam beta2")?;
    let adam_eps = read_f64(source, "adam eps")?;
    let epochs = read_u32(source, "epochs")? as usize;
    let batch_utterances = read_u32(source, "batch size")? as usize;
    let seed = read_u64(source, "seed")?;
    let max_duration = read_u32(source, "max duration")?;
    let config = DurationModelConfig {
        codebook_size,
        embed_dim,
        filter_size,
        kernel_size,
        dropout_rate,
        learning_rate,
        adam_beta1,
        adam_beta2,
        adam_eps,
        epochs,
        batch_utterances,
        seed,
        max_duration,
    };
    config.validate()?;
    // Guard the size computation against absurd headers before reading.
    let dims = [codebook_size, embed_dim, filter_size, kernel_size];
    if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none()
        || filter_size.checked_mul(filter_size).and_then(|v| v.checked_mul(kernel_size)).is_none()
    {
        return Err(Error::Format("duration model dimensions overflow".into()));
    }
    let n = Layout::new(&config).len();
    let params = read_f64_vec(source, n, "model parameters")?;
    DurationModel::from_parts(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn future_version_rejected() {
        let m = DurationModel::zeros(DurationModelConfig::new(2)).unwrap();
        let mut buf = Vec::new();
        store_model(&m, &mut buf).unwrap();
        buf[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(load_model(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_model_rejected() {
        let m = DurationModel::zeros(DurationModelConfig { embed_dim: 2, filter_size: 3, ..DurationModelConfig::new(2) }).unwrap();
        let mut buf = Vec::new();
        store_model(&m, &mut buf).unwrap();
        assert!(matches!(load_model(&mut &buf[..buf.len() - 3]), Err(Error::Truncation(_))));
    }

    #[test]
    fn zero_model_reloads_to_identical_predictions() {
        let m = DurationModel::zeros(DurationModelConfig::new(6)).unwrap();
        let mut buf = Vec::new();
        let n = store_model(&m, &mut buf).unwrap();
        assert_eq!(n, buf.len());
        let back = load_model(&mut buf.as_slice()).unwrap();
        assert!(back.bit_eq(&m));
        let units = [0, 5, 3, 1];
        assert_eq!(back.predict_durations(&units).unwrap(), m.predict_durations(&units).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_bit_exact(k in 1usize..6, e in 1usize..5, f in 1usize..5, kernel in prop_oneof![Just(1usize), Just(3), Just(5)], seed in any::<u64>()) {
            let cfg = DurationModelConfig { embed_dim: e, filter_size: f, kernel_size: kernel, seed, ..DurationModelConfig::new(k) };
            let m = DurationModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed), 0.3).unwrap();
            let mut buf = Vec::new();
            store_model(&m, &mut buf).unwrap();
            prop_assert!(load_model(&mut buf.as_slice()).unwrap().bit_eq(&m));
        }
    }
}
