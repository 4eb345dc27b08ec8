//! CIFAR-100 binary format.
//!
//! Each record is 3074 bytes: coarse label, fine label, then three 1024-byte
//! planes (R, G, B) of a 32×32 image in row-major order. The training and
//! test splits live in `train.bin` and `test.bin`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const PIXEL_BYTES: usize = 3 * PLANE;
pub const RECORD_BYTES: usize = 2 + PIXEL_BYTES;
pub const NUM_FINE: usize = 100;
pub const NUM_COARSE: usize = 20;

/// Super-class of every fine class, indexed by fine label.
pub const FINE_TO_COARSE: [u8; NUM_FINE] = [
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3, 3, 14, 9, 18, 7, 11, 3, 9, 7, 11, 6, 11, 5, 10, 7, 6, 13, 15,
    3, 15, 0, 11, 1, 10, 12, 14, 16, 9, 11, 5, 5, 19, 8, 8, 15, 13, 14, 17, 18, 10, 16, 4, 17, 4,
    2, 0, 17, 4, 18, 17, 10, 3, 2, 12, 12, 16, 12, 1, 9, 19, 2, 10, 0, 1, 16, 12, 9, 13, 15, 13,
    16, 19, 2, 4, 6, 19, 5, 5, 8, 19, 18, 1, 2, 15, 6, 0, 17, 8, 14, 13,
];

pub const FINE_NAMES: [&str; NUM_FINE] = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle",
    "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle",
    "caterpillar", "cattle", "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch",
    "crab", "crocodile", "cup", "dinosaur", "dolphin", "elephant", "flatfish", "forest", "fox",
    "girl", "hamster", "house", "kangaroo", "keyboard", "lamp", "lawn_mower", "leopard", "lion",
    "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain", "mouse", "mushroom",
    "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear", "pickup_truck", "pine_tree",
    "plain", "plate", "poppy", "porcupine", "possum", "rabbit", "raccoon", "ray", "road",
    "rocket", "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake",
    "spider", "squirrel", "streetcar", "sunflower", "sweet_pepper", "table", "tank",
    "telephone", "television", "tiger", "tractor", "train", "trout", "tulip", "turtle",
    "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
];

pub const COARSE_NAMES: [&str; NUM_COARSE] = [
    "aquatic_mammals", "fish", "flowers", "food_containers", "fruit_and_vegetables",
    "household_electrical_devices", "household_furniture", "insects", "large_carnivores",
    "large_man-made_outdoor_things", "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores", "medium_mammals", "non-insect_invertebrates", "people",
    "reptiles", "small_mammals", "trees", "vehicles_1", "vehicles_2",
];

pub fn fine_index(name: &str) -> Option<usize> {
    FINE_NAMES.iter().position(|&n| n == name)
}

/// One raw record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub coarse: u8,
    pub fine: u8,
    /// Planar RGB bytes, exactly [`PIXEL_BYTES`] long.
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    /// Builds a record from an interleaved `[32, 32, 3]` image in `[0, 1]`,
    /// rounding to the nearest byte.
    pub fn from_image(fine: u8, hwc: &[f64]) -> Self {
        assert_eq!(hwc.len(), PIXEL_BYTES);
        let mut pixels = vec![0u8; PIXEL_BYTES];
        for (i, px) in hwc.chunks_exact(3).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                pixels[ch * PLANE + i] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self {
            coarse: FINE_TO_COARSE[fine as usize],
            fine,
            pixels,
        }
    }

    /// Interleaved `[32, 32, 3]` floats in `[0, 1]`.
    fn write_hwc(&self, out: &mut [f64]) {
        for i in 0..PLANE {
            for ch in 0..3 {
                out[i * 3 + ch] = f64::from(self.pixels[ch * PLANE + i]) / 255.0;
            }
        }
    }
}

/// Parses a whole file, validating length and both label bytes.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::format(
            whole as u64,
            format!(
                "file length {} is not a multiple of {RECORD_BYTES}; trailing {} bytes",
                bytes.len(),
                bytes.len() - whole
            ),
        ));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let offset = (i * RECORD_BYTES) as u64;
            let (coarse, fine) = (rec[0], rec[1]);
            if usize::from(coarse) >= NUM_COARSE {
                return Err(Error::format(offset, format!("coarse label {coarse} >= {NUM_COARSE}")));
            }
            if usize::from(fine) >= NUM_FINE {
                return Err(Error::format(offset + 1, format!("fine label {fine} >= {NUM_FINE}")));
            }
            if FINE_TO_COARSE[usize::from(fine)] != coarse {
                return Err(Error::format(
                    offset,
                    format!(
                        "fine class {fine} ({}) belongs to super-class {}, record says {coarse}",
                        FINE_NAMES[usize::from(fine)],
                        FINE_TO_COARSE[usize::from(fine)]
                    ),
                ));
            }
            Ok(CifarRecord {
                coarse,
                fine,
                pixels: rec[2..].to_vec(),
            })
        })
        .collect()
}

pub fn serialize_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.coarse);
        out.push(r.fine);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Fine→coarse table observed in a set of records. Fails if one fine class
/// appears under two super-classes or a super-class holds more than five
/// fine classes; when all 100 fine classes are present every super-class
/// must hold exactly five.
pub fn extract_mapping(records: &[CifarRecord]) -> Result<Vec<Option<u8>>> {
    let mut map: Vec<Option<u8>> = vec![None; NUM_FINE];
    for (i, r) in records.iter().enumerate() {
        match map[usize::from(r.fine)] {
            Some(c) if c != r.coarse => {
                return Err(Error::format(
                    (i * RECORD_BYTES) as u64,
                    format!("fine class {} mapped to super-classes {c} and {}", r.fine, r.coarse),
                ))
            }
            _ => map[usize::from(r.fine)] = Some(r.coarse),
        }
    }
    let mut per_coarse = [0usize; NUM_COARSE];
    for c in map.iter().flatten() {
        per_coarse[usize::from(*c)] += 1;
    }
    let complete = map.iter().all(Option::is_some);
    if let Some(c) = per_coarse
        .iter()
        .position(|&n| n > 5 || (complete && n != 5))
    {
        return Err(Error::Corpus(format!(
            "super-class {c} ({}) contains {} fine classes, expected 5",
            COARSE_NAMES[c], per_coarse[c]
        )));
    }
    Ok(map)
}

/// Images with fine labels re-indexed to `0..classes.len()`.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    /// `[N, H, W, 3]`, values in `[0, 1]`.
    pub images: Tensor,
    /// Local class index of each image.
    pub labels: Vec<usize>,
    /// CIFAR-100 fine label of each local class.
    pub classes: Vec<usize>,
}

impl LabeledSet {
    pub fn from_records(records: &[CifarRecord]) -> Result<Self> {
        Self::from_records_with_classes(records, (0..NUM_FINE).collect())
    }

    /// Keeps only records whose fine label is in `classes`, numbering them by
    /// position in that list.
    pub fn from_records_with_classes(records: &[CifarRecord], classes: Vec<usize>) -> Result<Self> {
        let mut local = [None; NUM_FINE];
        for (i, &f) in classes.iter().enumerate() {
            if f >= NUM_FINE || local[f].is_some() {
                return Err(Error::input(format!("bad or repeated class id {f}")));
            }
            local[f] = Some(i);
        }
        let kept: Vec<(&CifarRecord, usize)> = records
            .iter()
            .filter_map(|r| local[usize::from(r.fine)].map(|l| (r, l)))
            .collect();
        if kept.is_empty() {
            return Err(Error::input("no records for the requested classes"));
        }
        let mut data = vec![0.0; kept.len() * PIXEL_BYTES];
        for ((r, _), out) in kept.iter().zip(data.chunks_exact_mut(PIXEL_BYTES)) {
            r.write_hwc(out);
        }
        Ok(Self {
            images: Tensor::new(vec![kept.len(), SIDE, SIDE, 3], data)?,
            labels: kept.iter().map(|&(_, l)| l).collect(),
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Super-class of each local class.
    pub fn class_coarse(&self) -> Vec<usize> {
        self.classes
            .iter()
            .map(|&f| usize::from(FINE_TO_COARSE[f]))
            .collect()
    }

    pub fn coarse_labels(&self) -> Vec<usize> {
        let cc = self.class_coarse();
        self.labels.iter().map(|&l| cc[l]).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Both splits of a CIFAR-100 directory.
#[derive(Debug, Clone)]
pub struct Cifar100 {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

pub fn read_records(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let records = parse_records(&bytes)?;
    extract_mapping(&records)?;
    Ok(records)
}

/// Loads `train.bin` and `test.bin`, optionally restricted to some fine classes.
pub fn load_cifar100(dir: &Path, classes: Option<&[usize]>) -> Result<Cifar100> {
    let classes = classes.map_or_else(|| (0..NUM_FINE).collect(), <[usize]>::to_vec);
    let train = read_records(&dir.join("train.bin"))?;
    let test = read_records(&dir.join("test.bin"))?;
    Ok(Cifar100 {
        train: LabeledSet::from_records_with_classes(&train, classes.clone())?,
        test: LabeledSet::from_records_with_classes(&test, classes)?,
    })
}
