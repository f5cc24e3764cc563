//! Sim-image wire format.
//!
//! A sim-image is a valid 1-bit grayscale PNG, one row of 64 pixels holding
//! a fingerprint of its features, plus a `tEXt` chunk keyed
//! `pe-sim-features` listing the feature tokens separated by spaces. Target
//! images may attach weights as `token=weight`. Scorers read the text
//! chunk; the pixel row exists so the file is an ordinary raster.

use sha2::{Digest, Sha256};

pub const FEATURE_CHUNK: &str = "pe-sim-features";
const WIDTH: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SimFeature {
    pub token: String,
    pub weight: Option<f64>,
}

impl SimFeature {
    pub fn plain(token: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            weight: None,
        }
    }

    pub fn weighted(token: impl Into<String>, weight: f64) -> Self {
        Self {
            token: token.into(),
            weight: Some(weight),
        }
    }
}

fn fingerprint(features: &[SimFeature]) -> [u8; (WIDTH / 8) as usize] {
    let mut row = [0u8; (WIDTH / 8) as usize];
    for f in features {
        let h = Sha256::digest(f.token.as_bytes());
        let bit = (h[0] as u32 % WIDTH) as usize;
        row[bit / 8] |= 0x80 >> (bit % 8);
    }
    row
}

/// Tokens must be non-empty printable ASCII without spaces or `=`.
pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_graphic() && b != b'=')
}

pub fn encode(features: &[SimFeature]) -> Vec<u8> {
    let text = features
        .iter()
        .filter(|f| is_valid_token(&f.token))
        .map(|f| match f.weight {
            Some(w) => format!("{}={w}", f.token),
            None => f.token.clone(),
        })
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, WIDTH, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        enc.add_text_chunk(FEATURE_CHUNK.to_string(), text)
            .expect("ASCII text chunk");
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(&fingerprint(features))
            .expect("in-memory PNG data");
    }
    out
}

/// Features listed in a sim-image, or `None` if `bytes` is not one.
pub fn decode(bytes: &[u8]) -> Option<Vec<SimFeature>> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    let chunk = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == FEATURE_CHUNK)?;
    let mut features = Vec::new();
    for item in chunk.text.split_whitespace() {
        match item.split_once('=') {
            Some((tok, w)) => features.push(SimFeature {
                token: tok.to_string(),
                weight: w.parse().ok(),
            }),
            None => features.push(SimFeature::plain(item)),
        }
    }
    Some(features)
}
