//! Flat `dotted.key = value` configuration text.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::blocks::{ActivationOrder, QkScale};
use crate::error::{Error, Result};
use crate::model::{FfnKind, ModelConfig};

pub type KvMap = BTreeMap<String, String>;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key keeps its last value.
pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    let mut offset = 0;
    for (lineno, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                offset,
                msg: format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            })?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    offset,
                    msg: format!("line {}: invalid key `{k}`", lineno + 1),
                });
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        offset += raw.len();
    }
    Ok(map)
}

pub fn render_kv(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect()
}

fn join_list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ModelConfig {
    pub fn write_kv(&self, out: &mut KvMap) {
        let mut put = |k: &str, v: String| {
            out.insert(format!("model.{k}"), v);
        };
        put("base_channels", self.base_channels.to_string());
        put("hm_counts", join_list(&self.hm_counts));
        put("state_dim", self.state_dim.to_string());
        put("pooled_spatial", self.pooled_spatial.to_string());
        put("heads", self.heads.to_string());
        put("enable_mamba", self.enable_mamba.to_string());
        put("enable_srsa", self.enable_srsa.to_string());
        put("ffn", self.ffn.as_str().to_string());
        put(
            "positional_embedding",
            self.use_positional_embedding.to_string(),
        );
        put(
            "qk_scale",
            match self.qk_scale {
                QkScale::InverseSqrtDim => "inverse_sqrt_dim",
                QkScale::None => "none",
            }
            .into(),
        );
        put(
            "activation_order",
            match self.activation_order {
                ActivationOrder::SiluThenConv => "silu_then_conv",
                ActivationOrder::ConvThenSilu => "conv_then_silu",
            }
            .into(),
        );
        put("skip_d", self.skip_d.to_string());
        put("conv1d_kernel", self.conv1d_kernel.to_string());
        put("expand_ratio", self.expand_ratio.to_string());
        put("ffn_expansion", self.ffn_expansion.to_string());
        put("seed", self.seed.to_string());
    }

    /// Applies one `model.*` key. Returns `Ok(false)` for keys outside
    /// the `model.` namespace.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(field) = key.strip_prefix("model.") else {
            return Ok(false);
        };
        match field {
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "hm_counts" => {
                let v: Vec<usize> = parse_list(key, value)?;
                self.hm_counts = v.try_into().map_err(|v: Vec<usize>| {
                    Error::Config(format!("{key}: expected 7 counts, got {}", v.len()))
                })?;
            }
            "state_dim" => self.state_dim = parse_value(key, value)?,
            "pooled_spatial" => self.pooled_spatial = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "enable_mamba" => self.enable_mamba = parse_value(key, value)?,
            "enable_srsa" => self.enable_srsa = parse_value(key, value)?,
            "ffn" => {
                self.ffn = FfnKind::parse(value).ok_or_else(|| {
                    Error::Config(format!("{key}: expected none|gdfn|cbfn, got `{value}`"))
                })?
            }
            "positional_embedding" => self.use_positional_embedding = parse_value(key, value)?,
            "qk_scale" => {
                self.qk_scale = match value {
                    "inverse_sqrt_dim" => QkScale::InverseSqrtDim,
                    "none" => QkScale::None,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected inverse_sqrt_dim|none, got `{value}`"
                        )))
                    }
                }
            }
            "activation_order" => {
                self.activation_order = match value {
                    "silu_then_conv" => ActivationOrder::SiluThenConv,
                    "conv_then_silu" => ActivationOrder::ConvThenSilu,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected silu_then_conv|conv_then_silu, got `{value}`"
                        )))
                    }
                }
            }
            "skip_d" => self.skip_d = parse_value(key, value)?,
            "conv1d_kernel" => self.conv1d_kernel = parse_value(key, value)?,
            "expand_ratio" => self.expand_ratio = parse_value(key, value)?,
            "ffn_expansion" => self.ffn_expansion = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(true)
    }

    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in map {
            cfg.set_kv(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        self.write_kv(&mut m);
        m
    }
}
