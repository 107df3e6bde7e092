use crate::error::{Error, Result};

/// Shape hyper-parameters of the causal transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, embed_dim: 64, layers: 2, heads: 2, ff_dim: 256, max_seq_len: 128, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be a positive multiple of heads");
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be >= 1");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be >= 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// `key=value` lines, stable order.
    pub fn to_text(&self) -> String {
        format!(
            "vocab_size={}\nembed_dim={}\nlayers={}\nheads={}\nff_dim={}\nmax_seq_len={}\ndropout={:?}\n",
            self.vocab_size, self.embed_dim, self.layers, self.heads, self.ff_dim, self.max_seq_len, self.dropout
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::new(0);
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            let int = || v.parse::<usize>().map_err(|e| Error::Config(format!("{k}: {e}")));
            match k {
                "vocab_size" => cfg.vocab_size = int()?,
                "embed_dim" => cfg.embed_dim = int()?,
                "layers" => cfg.layers = int()?,
                "heads" => cfg.heads = int()?,
                "ff_dim" => cfg.ff_dim = int()?,
                "max_seq_len" => cfg.max_seq_len = int()?,
                "dropout" => cfg.dropout = v.parse().map_err(|e| Error::Config(format!("dropout: {e}")))?,
                other => return Err(Error::Config(format!("unknown model config key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 7 {
            return Err(Error::Config("model config is incomplete".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::new(300);
        c.validate().unwrap();
        assert_eq!(c.ff_dim, 4 * c.embed_dim);
    }

    #[test]
    fn invariants_enforced() {
        let mut c = ModelConfig::new(10);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(10);
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(10);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::new(37);
        c.dropout = 0.1;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }
}
