use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, Classifier, FieldError, ImageRecord};
use crate::geo::{GeoPoint, LocalPoint, Polygon};

/// Axis-aligned grid in the local frame. Row 0 is the southern row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GridSpec {
    pub min: LocalPoint,
    pub cell_size_m: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(min: LocalPoint, cell_size_m: f64, width: usize, height: usize) -> Result<Self, FieldError> {
        if !(cell_size_m > 0.0) || width == 0 || height == 0 {
            return Err(FieldError::InvalidGrid(format!(
                "{width}x{height} cells of {cell_size_m} m"
            )));
        }
        Ok(GridSpec {
            min,
            cell_size_m,
            width,
            height,
        })
    }

    /// Smallest grid anchored at the bounding-box corner that covers `poly`.
    pub fn covering(poly: &Polygon, cell_size_m: f64) -> Result<Self, FieldError> {
        let (lo, hi) = poly.bounding_box();
        let n = |span: f64| ((span / cell_size_m) - 1e-9).ceil().max(1.0) as usize;
        Self::new(lo, cell_size_m, n(hi.x - lo.x), n(hi.y - lo.y))
    }

    /// `(col, row)` of the cell holding `p`. Points on the far edges belong
    /// to the last column or row.
    pub fn cell_of(&self, p: LocalPoint) -> Option<(usize, usize)> {
        let index = |v: f64, lo: f64, n: usize| -> Option<usize> {
            let t = (v - lo) / self.cell_size_m;
            if t < -1e-9 || t > n as f64 + 1e-9 {
                return None;
            }
            Some((t.max(0.0).floor() as usize).min(n - 1))
        };
        Some((
            index(p.x, self.min.x, self.width)?,
            index(p.y, self.min.y, self.height)?,
        ))
    }

    pub fn cell_bounds(&self, col: usize, row: usize) -> (LocalPoint, LocalPoint) {
        let lo = LocalPoint::new(
            self.min.x + col as f64 * self.cell_size_m,
            self.min.y + row as f64 * self.cell_size_m,
        );
        (lo, LocalPoint::new(lo.x + self.cell_size_m, lo.y + self.cell_size_m))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HeatCell {
    pub counts: [u32; 4],
    /// Majority label, `None` when the cell holds no records.
    pub label: Option<ClassLabel>,
    /// Share of the majority label among the cell's records.
    pub confidence: f64,
}

impl HeatCell {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    fn settle(&mut self) {
        let total = self.total();
        if total == 0 {
            self.label = None;
            self.confidence = 0.0;
            return;
        }
        let mut best = 0;
        for i in 1..4 {
            if self.counts[i] > self.counts[best] {
                best = i;
            }
        }
        self.label = Some(ClassLabel::ALL[best]);
        self.confidence = self.counts[best] as f64 / total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HeatmapGrid {
    pub origin: GeoPoint,
    pub grid: GridSpec,
    /// Row-major, `height` rows of `width` cells.
    pub cells: Vec<HeatCell>,
    pub records_binned: u64,
    pub out_of_grid: u64,
}

impl HeatmapGrid {
    pub fn cell(&self, col: usize, row: usize) -> &HeatCell {
        &self.cells[row * self.grid.width + col]
    }

    pub fn to_doc(&self) -> HeatmapDoc {
        let rows = (0..self.grid.height)
            .map(|r| {
                (0..self.grid.width)
                    .map(|c| {
                        let cell = self.cell(c, r);
                        (cell.label, cell.confidence)
                    })
                    .collect()
            })
            .collect();
        HeatmapDoc {
            origin: self.origin,
            cell_size_m: self.grid.cell_size_m,
            min_local: self.grid.min,
            width: self.grid.width,
            height: self.grid.height,
            rows,
            records_binned: self.records_binned,
            out_of_grid: self.out_of_grid,
        }
    }
}

/// The `heatmap.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HeatmapDoc {
    pub origin: GeoPoint,
    pub cell_size_m: f64,
    pub min_local: LocalPoint,
    pub width: usize,
    pub height: usize,
    /// South to north; each row west to east as `[label | null, confidence]`.
    pub rows: Vec<Vec<(Option<ClassLabel>, f64)>>,
    pub records_binned: u64,
    pub out_of_grid: u64,
}

pub fn build_heatmap(
    origin: GeoPoint,
    records: &[ImageRecord],
    grid: GridSpec,
    classifier: &dyn Classifier,
) -> Result<HeatmapGrid, FieldError> {
    let mut cells = vec![HeatCell::default(); grid.width * grid.height];
    let mut binned = 0;
    let mut out = 0;
    for rec in records {
        match grid.cell_of(rec.local) {
            Some((c, r)) => {
                let (label, _) = classifier.classify(rec)?;
                cells[r * grid.width + c].counts[label.index()] += 1;
                binned += 1;
            }
            None => out += 1,
        }
    }
    for cell in &mut cells {
        cell.settle();
    }
    Ok(HeatmapGrid {
        origin,
        grid,
        cells,
        records_binned: binned,
        out_of_grid: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{OracleClassifier, Spectrum};
    use crate::UavId;

    fn rec(id: u64, x: f64, y: f64, class: ClassLabel) -> ImageRecord {
        ImageRecord {
            record_id: id,
            uav_id: UavId(1),
            position: GeoPoint { lat: 0.0, lon: 0.0 },
            local: LocalPoint::new(x, y),
            timestamp: 0,
            payload: Spectrum {
                red: 0.2,
                nir: 0.4,
                true_class: class,
            },
        }
    }

    fn grid() -> GridSpec {
        GridSpec::new(LocalPoint::new(0.0, 0.0), 10.0, 3, 2).unwrap()
    }

    #[test]
    fn empty_records_give_no_data() {
        let h = build_heatmap(GeoPoint { lat: 0.0, lon: 0.0 }, &[], grid(), &OracleClassifier).unwrap();
        assert!(h.cells.iter().all(|c| c.label.is_none()));
        let doc = serde_json::to_value(h.to_doc()).unwrap();
        assert_eq!(doc["rows"][0][0], serde_json::json!([null, 0.0]));
    }

    #[test]
    fn majority_with_low_enum_tie_break_and_out_of_grid() {
        let records = vec![
            rec(1, 1.0, 1.0, ClassLabel::BroadleafWeed),
            rec(2, 2.0, 2.0, ClassLabel::Crop),
            rec(3, 15.0, 5.0, ClassLabel::Grass),
            rec(4, 15.0, 5.0, ClassLabel::Grass),
            rec(5, 16.0, 6.0, ClassLabel::Soil),
            rec(6, 30.0, 20.0, ClassLabel::Soil),
            rec(7, 31.0, 5.0, ClassLabel::Soil),
        ];
        let h = build_heatmap(GeoPoint { lat: 0.0, lon: 0.0 }, &records, grid(), &OracleClassifier).unwrap();
        assert_eq!(h.cell(0, 0).label, Some(ClassLabel::Crop));
        assert_eq!(h.cell(0, 0).confidence, 0.5);
        assert_eq!(h.cell(1, 0).label, Some(ClassLabel::Grass));
        assert_eq!(h.cell(2, 1).label, Some(ClassLabel::Soil));
        assert_eq!(h.records_binned, 6);
        assert_eq!(h.out_of_grid, 1);
        let total: u32 = h.cells.iter().map(HeatCell::total).sum();
        assert_eq!(total as u64, h.records_binned);
    }

    #[test]
    fn covering_grid() {
        let sq = Polygon::rectangle(LocalPoint::new(0.0, 0.0), LocalPoint::new(200.0, 95.0)).unwrap();
        let g = GridSpec::covering(&sq, 10.0).unwrap();
        assert_eq!((g.width, g.height), (20, 10));
        assert_eq!(g.cell_of(LocalPoint::new(200.0, 95.0)), Some((19, 9)));
        assert_eq!(g.cell_of(LocalPoint::new(-1.0, 5.0)), None);
    }
}
