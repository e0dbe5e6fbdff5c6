//! Binary record codec for log segments.
//!
//! Frame: `len:u32le | crc32:u32le | payload`. Payloads start with a 1-byte
//! schema tag so the value format can evolve without rewriting old segments.

use crate::error::{Result, VpgError};
use crate::store::{EntrySource, SceneEntry};
use crate::types::{
    BoundingBox, Category, CorpusMetadata, DetectedObject, Domain, Embedding, ImageSignature,
    SIGNATURE_LEN,
};

pub(crate) const SCHEMA_V1: u8 = 1;

pub(crate) fn crc32(data: &[u8]) -> u32 {
    // IEEE 802.3 polynomial, bitwise
    let mut crc = 0xffff_ffffu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

pub(crate) fn encode_frame(entry: &SceneEntry) -> Vec<u8> {
    let payload = encode_payload(entry);
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn encode_payload(entry: &SceneEntry) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + entry.full_embedding.dim() * 2);
    out.push(SCHEMA_V1);
    out.extend_from_slice(entry.signature.as_bytes());
    out.extend_from_slice(&entry.ingested_at.to_le_bytes());
    out.push(entry.source as u8);
    encode_embedding(&mut out, &entry.full_embedding);
    out.extend_from_slice(&(entry.objects.len() as u32).to_le_bytes());
    for obj in &entry.objects {
        encode_object(&mut out, obj);
    }
    match &entry.metadata {
        None => out.push(0),
        Some(m) => {
            out.push(1);
            out.push(m.is_inspirational as u8);
            out.push(m.is_grayscale as u8);
            out.push(m.is_collage_or_screenshot as u8);
            out.extend_from_slice(&m.width.to_le_bytes());
            out.extend_from_slice(&m.height.to_le_bytes());
            out.extend_from_slice(&m.blur_score.to_le_bytes());
        }
    }
    out
}

fn encode_embedding(out: &mut Vec<u8>, e: &Embedding) {
    out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
    out.extend_from_slice(&e.to_f16_bytes());
}

fn encode_object(out: &mut Vec<u8>, obj: &DetectedObject) {
    for v in [obj.bbox.x, obj.bbox.y, obj.bbox.w, obj.bbox.h] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(match obj.category.domain() {
        Domain::Fashion => 0,
        Domain::HomeDecor => 1,
    });
    let id = obj.category.id().as_bytes();
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&obj.confidence.to_le_bytes());
    encode_embedding(out, &obj.embedding);
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(VpgError::Store("record truncated".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn embedding(&mut self) -> Result<Embedding> {
        let dim = self.u32()? as usize;
        Embedding::from_f16_bytes(self.take(dim * 2)?)
    }
}

pub(crate) fn decode_payload(payload: &[u8]) -> Result<SceneEntry> {
    let mut r = Reader::new(payload);
    let tag = r.u8()?;
    if tag != SCHEMA_V1 {
        return Err(VpgError::Store(format!("unknown schema tag {tag}")));
    }
    let signature = ImageSignature::from_bytes(r.take(SIGNATURE_LEN)?.try_into().unwrap());
    let ingested_at = r.u64()?;
    let source = EntrySource::from_byte(r.u8()?)?;
    let full_embedding = r.embedding()?;
    let n_objects = r.u32()? as usize;
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let x = r.u32()?;
        let y = r.u32()?;
        let w = r.u32()?;
        let h = r.u32()?;
        let domain = match r.u8()? {
            0 => Domain::Fashion,
            1 => Domain::HomeDecor,
            other => return Err(VpgError::Store(format!("unknown domain byte {other}"))),
        };
        let id_len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| VpgError::Store("non-utf8 category id".into()))?
            .to_string();
        let confidence = r.f32()?;
        let embedding = r.embedding()?;
        objects.push(DetectedObject {
            bbox: BoundingBox::new(x, y, w, h)?,
            category: Category::from_parts(id, domain),
            confidence,
            embedding,
        });
    }
    let metadata = match r.u8()? {
        0 => None,
        _ => Some(CorpusMetadata {
            is_inspirational: r.u8()? != 0,
            is_grayscale: r.u8()? != 0,
            is_collage_or_screenshot: r.u8()? != 0,
            width: r.u32()?,
            height: r.u32()?,
            blur_score: r.f32()?,
        }),
    };
    Ok(SceneEntry {
        signature,
        full_embedding,
        objects,
        ingested_at,
        source,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Taxonomy;

    #[test]
    fn frame_roundtrip() {
        let tax = Taxonomy::default_taxonomy();
        let entry = SceneEntry {
            signature: ImageSignature::digest(b"scene"),
            full_embedding: Embedding::new(vec![0.25, -0.5, 0.75]).unwrap(),
            objects: vec![DetectedObject {
                bbox: BoundingBox::new(1, 2, 30, 40).unwrap(),
                category: tax.resolve("shoes").unwrap(),
                confidence: 0.875,
                embedding: Embedding::new(vec![0.5, 0.5, -0.25]).unwrap(),
            }],
            ingested_at: 123_456,
            source: EntrySource::Stream,
            metadata: Some(CorpusMetadata::permissive(800, 1200)),
        };
        let frame = encode_frame(&entry);
        let len = u32::from_le_bytes(frame[0..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(frame[4..8].try_into().unwrap());
        let payload = &frame[8..];
        assert_eq!(payload.len(), len);
        assert_eq!(crc32(payload), crc);
        let back = decode_payload(payload).unwrap();
        assert_eq!(back.signature, entry.signature);
        assert_eq!(back.ingested_at, entry.ingested_at);
        assert_eq!(back.source, EntrySource::Stream);
        assert_eq!(back.objects.len(), 1);
        assert_eq!(back.objects[0].category.id(), "shoes");
        assert_eq!(back.objects[0].confidence, 0.875);
        assert_eq!(back.metadata, entry.metadata);
        // f16-representable values survive exactly
        assert_eq!(back.full_embedding.values(), entry.full_embedding.values());
    }

    #[test]
    fn crc_detects_corruption() {
        let data = b"hello world";
        let good = crc32(data);
        let mut bad = data.to_vec();
        bad[3] ^= 0x40;
        assert_ne!(crc32(&bad), good);
    }
}
