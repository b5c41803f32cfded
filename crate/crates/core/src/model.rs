//! Model configuration, parameter initialization and the `CTXP` parameter file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometric_context::{GeoEncoder, MatchabilityHead};
use crate::io::{read_matrix_from, write_matrix_to, Reader};
use crate::losses::Temperature;
use crate::numerics::{Matrix, ParamStore, CN_EPS};
use crate::visual_context::VisEncoder;

pub const PARAMS_MAGIC: &[u8; 4] = b"CTXP";
pub const PARAMS_VERSION: u32 = 1;
/// Name of the 1×1 parameter holding the softmax temperature.
pub const TEMPERATURE: &str = "temperature";
/// Feature order fed to the visual fusion MLP.
pub const VIS_CONCAT_ORDER: &str = "regional,local";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub desc_dim: usize,
    pub geo_width: usize,
    pub geo_units: usize,
    pub regional_depth: usize,
    pub vis_hidden: usize,
    pub fuse_hidden: usize,
    /// Initial scale of the geometric and visual output layers relative to unit gain.
    pub context_gain: f64,
    pub init_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            desc_dim: 128,
            geo_width: 128,
            geo_units: 4,
            regional_depth: 64,
            vis_hidden: 512,
            fuse_hidden: 256,
            context_gain: 0.1,
            init_temperature: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("desc_dim", self.desc_dim),
            ("geo_width", self.geo_width),
            ("geo_units", self.geo_units),
            ("regional_depth", self.regional_depth),
            ("vis_hidden", self.vis_hidden),
            ("fuse_hidden", self.fuse_hidden),
        ];
        if let Some((k, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if !(self.context_gain >= 0.0 && self.context_gain.is_finite()) {
            return Err(Error::Config("`context_gain` must be finite and non-negative".into()));
        }
        Temperature::new(self.init_temperature)
            .map_err(|_| Error::Config("`init_temperature` must be positive".into()))?;
        Ok(())
    }

    pub const KEYS: [&'static str; 8] = [
        "desc_dim",
        "geo_width",
        "geo_units",
        "regional_depth",
        "vis_hidden",
        "fuse_hidden",
        "context_gain",
        "init_temperature",
    ];

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("desc_dim", self.desc_dim.to_string()),
            ("geo_width", self.geo_width.to_string()),
            ("geo_units", self.geo_units.to_string()),
            ("regional_depth", self.regional_depth.to_string()),
            ("vis_hidden", self.vis_hidden.to_string()),
            ("fuse_hidden", self.fuse_hidden.to_string()),
            ("context_gain", self.context_gain.to_string()),
            ("init_temperature", self.init_temperature.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for key `{key}`")))
        }
        match key {
            "desc_dim" => self.desc_dim = p(key, value)?,
            "geo_width" => self.geo_width = p(key, value)?,
            "geo_units" => self.geo_units = p(key, value)?,
            "regional_depth" => self.regional_depth = p(key, value)?,
            "vis_hidden" => self.vis_hidden = p(key, value)?,
            "fuse_hidden" => self.fuse_hidden = p(key, value)?,
            "context_gain" => self.context_gain = p(key, value)?,
            "init_temperature" => self.init_temperature = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn header(&self) -> String {
        format!(
            "desc_dim={}\ngeo_width={}\ngeo_units={}\nregional_depth={}\nvis_hidden={}\n\
             fuse_hidden={}\nvis_concat={VIS_CONCAT_ORDER}\ncn_eps={CN_EPS:e}\n",
            self.desc_dim,
            self.geo_width,
            self.geo_units,
            self.regional_depth,
            self.vis_hidden,
            self.fuse_hidden
        )
    }

    fn from_header(text: &str, what: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .collect();
        let get = |k: &str| -> Result<usize> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(what, format!("header lacks `{k}`")))
        };
        if kv.get("vis_concat") != Some(&VIS_CONCAT_ORDER) {
            return Err(Error::format(what, "unsupported vis_concat order"));
        }
        Ok(Self {
            desc_dim: get("desc_dim")?,
            geo_width: get("geo_width")?,
            geo_units: get("geo_units")?,
            regional_depth: get("regional_depth")?,
            vis_hidden: get("vis_hidden")?,
            fuse_hidden: get("fuse_hidden")?,
            ..Self::default()
        })
    }
}

/// Network structure plus every named parameter, including the temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub head: MatchabilityHead,
    pub geo: GeoEncoder,
    pub vis: VisEncoder,
    pub params: ParamStore,
}

impl Model {
    fn structure(config: &ModelConfig) -> (MatchabilityHead, GeoEncoder, VisEncoder) {
        (
            MatchabilityHead::new(config.desc_dim),
            GeoEncoder::new(config.geo_width, config.geo_units, config.desc_dim),
            VisEncoder::new(
                config.regional_depth,
                config.vis_hidden,
                config.desc_dim,
                config.fuse_hidden,
                config.desc_dim,
            ),
        )
    }

    /// Seeded initialization; every value is representable in `f32`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (head, geo, vis) = Self::structure(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        head.init(&mut params, &mut rng);
        geo.init(&mut params, config.context_gain, &mut rng);
        vis.init(&mut params, config.context_gain, &mut rng);
        params.insert(TEMPERATURE, Matrix::scalar(config.init_temperature), true);
        params.snap_f32();
        Ok(Self {
            config,
            head,
            geo,
            vis,
            params,
        })
    }

    pub fn temperature(&self) -> Temperature {
        let a = self
            .params
            .value(TEMPERATURE)
            .map(Matrix::item)
            .unwrap_or(f64::NAN);
        Temperature::projected(a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        let header = self.config.header();
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(u8::from(p.trainable));
            write_matrix_to(&p.value, &mut buf).expect("writing to memory");
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, what);
        r.magic(PARAMS_MAGIC)?;
        let version = r.u32()?;
        if version != PARAMS_VERSION {
            return Err(Error::format(what, format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header = std::str::from_utf8(r.bytes(hlen)?)
            .map_err(|_| Error::format(what, "header is not UTF-8"))?;
        let config = ModelConfig::from_header(header, what)?;
        let (head, geo, vis) = Self::structure(&config);
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.bytes(n)?)
                .map_err(|_| Error::format(what, "section name is not UTF-8"))?
                .to_string();
            let trainable = match r.bytes(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(Error::format(what, format!("bad trainable flag {b}"))),
            };
            let m = read_matrix_from(&mut r)?;
            params.insert(name, m, trainable);
        }
        r.finish()?;
        let model = Self {
            config,
            head,
            geo,
            vis,
            params,
        };
        model.check_shapes(what)?;
        Ok(model)
    }

    /// Every parameter required by the structure is present with the expected shape.
    fn check_shapes(&self, what: &str) -> Result<()> {
        let reference = Model::init(self.config.clone(), 0)?;
        if reference.params.len() != self.params.len() {
            return Err(Error::format(what, "unexpected parameter count"));
        }
        for (name, p) in reference.params.iter() {
            let q = self
                .params
                .get(name)
                .ok_or_else(|| Error::format(what, format!("missing section `{name}`")))?;
            if q.value.shape() != p.value.shape() {
                return Err(Error::format(what, format!("section `{name}` has wrong shape")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            desc_dim: 8,
            geo_width: 6,
            geo_units: 2,
            regional_depth: 5,
            vis_hidden: 7,
            fuse_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::init(small(), 3).unwrap();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes, "m").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn temperature_is_a_trainable_scalar() {
        let m = Model::init(small(), 0).unwrap();
        let t = m.params.get(TEMPERATURE).unwrap();
        assert!(t.trainable);
        assert_eq!(t.value.as_slice(), &[1.0]);
        assert_eq!(m.temperature().value(), 1.0);
    }

    #[test]
    fn running_stats_are_frozen() {
        let m = Model::init(small(), 0).unwrap();
        for (name, p) in m.params.iter() {
            assert_eq!(p.trainable, !name.contains(".running_"), "{name}");
        }
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(Model::init(small(), 0).unwrap(), Model::init(small(), 1).unwrap());
        assert_eq!(Model::init(small(), 5).unwrap(), Model::init(small(), 5).unwrap());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Model::init(small(), 0).unwrap().to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 2], "m").is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Model::from_bytes(&bad, "m").is_err());
    }
}
