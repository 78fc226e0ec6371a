//! File formats: P5 PGM images and the versioned binary model checkpoint.

pub mod pgm {
    //! Binary PGM (P5), maxval 255. The only image format the lab reads or
    //! writes; bytes are bit-reproducible.

    use std::io::Write;
    use std::path::Path;

    use crate::error::{Error, Result};
    use crate::tensor::Tensor;

    /// Write an H×W tensor as P5, clamping values to [0,1] and quantizing
    /// to 0..=255 with round-half-up.
    pub fn write(path: &Path, img: &Tensor) -> Result<()> {
        let (h, w) = img.dims2("pgm write")?;
        let mut out = Vec::with_capacity(h * w + 32);
        write!(out, "P5\n{w} {h}\n255\n")?;
        for &v in img.data() {
            let q = (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8;
            out.push(q);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Read a P5 file into an H×W tensor scaled to [0,1].
    pub fn read(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        let corrupt = |detail: String| Error::Corrupt {
            what: "pgm",
            detail: format!("{}: {detail}", path.display()),
        };
        let mut pos = 0usize;
        let mut token = |bytes: &[u8]| -> Result<String> {
            // skip whitespace and '#' comments
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(corrupt("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token(&bytes)?;
        if magic != "P5" {
            return Err(corrupt(format!("magic '{magic}', expected P5")));
        }
        let w: usize = token(&bytes)?.parse().map_err(|_| corrupt("bad width".into()))?;
        let h: usize = token(&bytes)?.parse().map_err(|_| corrupt("bad height".into()))?;
        let maxval: usize = token(&bytes)?
            .parse()
            .map_err(|_| corrupt("bad maxval".into()))?;
        if maxval == 0 || maxval > 255 {
            return Err(corrupt(format!("maxval {maxval} unsupported")));
        }
        pos += 1; // single whitespace after maxval
        if bytes.len() < pos + w * h {
            return Err(corrupt(format!(
                "expected {} pixel bytes, found {}",
                w * h,
                bytes.len().saturating_sub(pos)
            )));
        }
        let data = bytes[pos..pos + w * h]
            .iter()
            .map(|&b| b as f64 / maxval as f64)
            .collect();
        Tensor::new(vec![h, w], data)
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn round_trip_is_exact_on_quantized_values() {
            let dir = std::env::temp_dir().join("flowsteer-pgm-test");
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join("rt.pgm");
            let img = Tensor::new(
                vec![2, 3],
                vec![0.0, 1.0, 128.0 / 255.0, 5.0 / 255.0, 254.0 / 255.0, 17.0 / 255.0],
            )
            .unwrap();
            write(&path, &img).unwrap();
            let back = read(&path).unwrap();
            assert_eq!(back, img);
        }

        #[test]
        fn rejects_wrong_magic() {
            let dir = std::env::temp_dir().join("flowsteer-pgm-test");
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join("bad.pgm");
            std::fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
            assert!(read(&path).is_err());
        }
    }
}

pub mod checkpoint {
    //! Versioned binary model checkpoint: magic, convention tag,
    //! architecture, then the parameter blob as little-endian f64.

    use std::path::Path;

    use crate::error::{Error, Result};
    use crate::flow::{CondSpec, VelocityField, CONVENTION_TAG};
    use crate::guidance::Classifier;

    const MAGIC: &[u8; 8] = b"FLWSTEER";
    const CLASSIFIER_MAGIC: &[u8; 8] = b"FLWSTEEC";
    const VERSION: u32 = 1;

    fn put_u32(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    fn put_str(out: &mut Vec<u8>, s: &str) {
        put_u32(out, s.len() as u32);
        out.extend_from_slice(s.as_bytes());
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.pos + n > self.bytes.len() {
                return Err(Error::Corrupt {
                    what: "checkpoint",
                    detail: "truncated file".into(),
                });
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        fn u32(&mut self) -> Result<u32> {
            let b = self.take(4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }

        fn string(&mut self) -> Result<String> {
            let n = self.u32()? as usize;
            Ok(String::from_utf8_lossy(self.take(n)?).into_owned())
        }
    }

    pub fn save_model(path: &Path, model: &VelocityField) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, CONVENTION_TAG);
        put_u32(&mut out, model.data_dim() as u32);
        put_u32(&mut out, model.time_feature_count() as u32);
        match model.cond() {
            Some(c) => {
                out.push(1);
                put_u32(&mut out, c.classes as u32);
                put_u32(&mut out, c.dim as u32);
            }
            None => out.push(0),
        }
        put_u32(&mut out, model.hidden().len() as u32);
        for &h in model.hidden() {
            put_u32(&mut out, h as u32);
        }
        put_str(&mut out, "silu");
        for p in model.params() {
            put_u32(&mut out, p.rank() as u32);
            for &d in p.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_model(path: &Path) -> Result<VelocityField> {
        let bytes = std::fs::read(path)?;
        let corrupt = |detail: String| Error::Corrupt {
            what: "checkpoint",
            detail,
        };
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
        };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("version {version}, expected {VERSION}")));
        }
        let tag = r.string()?;
        if tag != CONVENTION_TAG {
            return Err(corrupt(format!(
                "flow convention '{tag}' does not match '{CONVENTION_TAG}'"
            )));
        }
        let data_dim = r.u32()? as usize;
        let time_features = r.u32()? as usize;
        let cond = match r.take(1)?[0] {
            0 => None,
            1 => Some(CondSpec {
                classes: r.u32()? as usize,
                dim: r.u32()? as usize,
            }),
            other => return Err(corrupt(format!("bad cond flag {other}"))),
        };
        let nh = r.u32()? as usize;
        let mut hidden = Vec::with_capacity(nh);
        for _ in 0..nh {
            hidden.push(r.u32()? as usize);
        }
        let act = r.string()?;
        if act != "silu" {
            return Err(corrupt(format!("unknown activation '{act}'")));
        }
        let mut model = VelocityField::zeros(data_dim, time_features, &hidden, cond)?;
        for p in model.params_mut() {
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            if shape != p.shape() {
                return Err(corrupt(format!(
                    "param shape {:?} does not match architecture {:?}",
                    shape,
                    p.shape()
                )));
            }
            let n = p.len();
            let raw = r.take(n * 8)?;
            for (i, chunk) in raw.chunks_exact(8).enumerate() {
                p.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save_classifier(path: &Path, model: &Classifier) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CLASSIFIER_MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, model.input_dim() as u32);
        put_u32(&mut out, model.classes() as u32);
        put_u32(&mut out, model.hidden().len() as u32);
        for &h in model.hidden() {
            put_u32(&mut out, h as u32);
        }
        for p in model.params() {
            for &v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_classifier(path: &Path) -> Result<Classifier> {
        let bytes = std::fs::read(path)?;
        let corrupt = |detail: String| Error::Corrupt {
            what: "classifier checkpoint",
            detail,
        };
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
        };
        if r.take(8)? != CLASSIFIER_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("version {version}, expected {VERSION}")));
        }
        let input_dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let nh = r.u32()? as usize;
        let mut hidden = Vec::with_capacity(nh);
        for _ in 0..nh {
            hidden.push(r.u32()? as usize);
        }
        let mut model = Classifier::zeros(input_dim, &hidden, classes)?;
        for p in model.params_mut() {
            let n = p.len();
            let raw = r.take(n * 8)?;
            for (i, chunk) in raw.chunks_exact(8).enumerate() {
                p.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes".into()));
        }
        Ok(model)
    }

}
