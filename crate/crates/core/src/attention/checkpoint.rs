use super::{AttentionConfig, AttentionTensors, AttentionWeights, VariantKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// A single attention layer restored from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCheckpoint {
    pub config: AttentionConfig,
    pub seed: u64,
    pub weights: AttentionWeights,
}

/// Header keys are variant, d_m, h, ell, causal, bias, seed; tensors follow
/// in the order wq, wk?, wv?, wo, wa?, then the present biases.
pub fn save_attention(cfg: &AttentionConfig, seed: u64, w: &AttentionWeights) -> Result<Checkpoint> {
    w.check(cfg)?;
    save_attention_prefixed(cfg, seed, w, "")
}

pub(crate) fn header_for(cfg: &AttentionConfig, seed: u64) -> Vec<(String, String)> {
    vec![
        ("variant".into(), cfg.variant().to_string()),
        ("d_m".into(), cfg.d_m().to_string()),
        ("h".into(), cfg.heads().to_string()),
        ("ell".into(), cfg.ell().map_or_else(|| "none".to_string(), |l| l.to_string())),
        ("causal".into(), cfg.is_causal().to_string()),
        ("bias".into(), cfg.has_bias().to_string()),
        ("seed".into(), seed.to_string()),
    ]
}

pub(crate) fn save_attention_prefixed(
    cfg: &AttentionConfig,
    seed: u64,
    w: &AttentionWeights,
    prefix: &str,
) -> Result<Checkpoint> {
    Ok(Checkpoint {
        header: header_for(cfg, seed),
        tensors: w
            .named()
            .into_iter()
            .map(|(n, m)| (format!("{prefix}{n}"), m.clone()))
            .collect(),
    })
}

pub(crate) fn config_from_header(ck: &Checkpoint) -> Result<AttentionConfig> {
    let variant: VariantKind = ck.require("variant")?.parse()?;
    let ell = match ck.require("ell")? {
        "none" => None,
        _ => Some(ck.parse::<usize>("ell")?),
    };
    Ok(AttentionConfig::new(variant, ck.parse("d_m")?, ck.parse("h")?, ell)?
        .causal(ck.parse("causal")?)
        .bias(ck.parse("bias")?))
}

pub(crate) fn weights_from(ck: &Checkpoint, cfg: &AttentionConfig, prefix: &str) -> Result<AttentionWeights> {
    let take = |n: &str| ck.tensor(&format!("{prefix}{n}")).cloned();
    let need = |n: &str| take(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor {prefix}{n}")));
    let w = AttentionTensors {
        wq: need("wq")?,
        wk: take("wk"),
        wv: take("wv"),
        wo: need("wo")?,
        wa: take("wa"),
        bq: take("bq"),
        bk: take("bk"),
        bv: take("bv"),
        bo: take("bo"),
        ba: take("ba"),
    };
    w.check(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(w)
}

pub fn load_attention(ck: &Checkpoint) -> Result<AttentionCheckpoint> {
    let config = config_from_header(ck)?;
    let weights = weights_from(ck, &config, "")?;
    if ck.tensors.len() != weights.named().len() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(AttentionCheckpoint {
        config,
        seed: ck.parse("seed")?,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::init_weights;
    use crate::rng::Rng;

    #[test]
    fn every_variant_round_trips_through_bytes() {
        for v in VariantKind::ALL {
            let cfg = AttentionConfig::new(v, 8, 2, Some(5)).unwrap().causal(v == VariantKind::Super);
            let w = init_weights(&cfg, &mut Rng::new(31));
            let ck = save_attention(&cfg, 31, &w).unwrap();
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = load_attention(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
            assert_eq!(back.config, cfg);
            assert_eq!(back.seed, 31);
            assert_eq!(back.weights, w);
        }
    }

    #[test]
    fn tensor_order_is_fixed() {
        let cfg = AttentionConfig::new(VariantKind::Standard, 4, 1, None).unwrap();
        let w = init_weights(&cfg, &mut Rng::new(0));
        let ck = save_attention(&cfg, 0, &w).unwrap();
        let names: Vec<&str> = ck.tensors.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"]);
        assert_eq!(ck.get("ell"), Some("none"));
    }

    #[test]
    fn mismatched_tensors_rejected() {
        let cfg = AttentionConfig::new(VariantKind::Efficient, 4, 1, None).unwrap();
        let w = init_weights(&cfg, &mut Rng::new(0));
        let mut ck = save_attention(&cfg, 0, &w).unwrap();
        ck.header[0].1 = "standard".into();
        assert!(load_attention(&ck).is_err());
    }
}
