//! On-chip buffers and the MACC datapath.

use super::config::AcceleratorConfig;
use super::SimError;

/// ICache address of input pixel `(y, x, ci)`: the line buffer keeps one
/// input row per line, lines selected by `y mod 4`.
pub fn icache_slot(y: u32, x: u32, ci: u32, w_in: u32, ch_in: u32) -> Result<usize, SimError> {
    let line = w_in as u64 * ch_in as u64;
    let capacity = AcceleratorConfig::default().icache_line_capacity as u64;
    if line > capacity {
        return Err(SimError::LineTooWide { width: line, capacity });
    }
    Ok(((y % 4) as u64 * line + x as u64 * ch_in as u64 + ci as u64) as usize)
}

/// Nine multipliers feeding a fixed balanced adder tree, in f32.
///
/// 1x1 layers place their single operand pair at index 4 and leave the
/// other eight slots at zero.
#[inline]
pub fn macc_3x3(pixels: &[f32; 9], weights: &[f32; 9]) -> f32 {
    let p: [f32; 9] = std::array::from_fn(|n| pixels[n] * weights[n]);
    ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7])) + p[8]
}

/// Peak number of live elements seen in each buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Occupancy {
    pub icache: u64,
    pub wcache: u64,
    pub ocache: u64,
    pub gpool: u64,
}

impl Occupancy {
    pub fn max(self, o: Occupancy) -> Occupancy {
        Occupancy {
            icache: self.icache.max(o.icache),
            wcache: self.wcache.max(o.wcache),
            ocache: self.ocache.max(o.ocache),
            gpool: self.gpool.max(o.gpool),
        }
    }
}

/// Line buffer holding `lines` input rows, each `w_in * ch_in` wide.
pub(crate) struct ICache {
    data: Vec<f32>,
    tags: Vec<Option<u32>>,
    line_len: usize,
    ch_in: u32,
}

impl ICache {
    pub(crate) fn new(acc: &AcceleratorConfig, w_in: u32, ch_in: u32, layer: &str) -> Result<Self, SimError> {
        let line = w_in as u64 * ch_in as u64;
        if line > acc.icache_line_capacity as u64 {
            return Err(SimError::CacheOverflow {
                layer: layer.to_string(),
                cache: "icache",
                needed: line * acc.icache_lines as u64,
                capacity: acc.icache_capacity as u64,
            });
        }
        Ok(ICache {
            data: vec![0.0; acc.icache_capacity as usize],
            tags: vec![None; acc.icache_lines as usize],
            line_len: line as usize,
            ch_in,
        })
    }

    pub(crate) fn holds(&self, row: u32) -> bool {
        self.tags[row as usize % self.tags.len()] == Some(row)
    }

    /// Installs `row` into line `row mod lines`; `values` is the row in x-major, channel-minor order.
    pub(crate) fn fill(&mut self, row: u32, values: impl Iterator<Item = f32>) {
        let line = row as usize % self.tags.len();
        let base = line * self.line_len;
        for (slot, v) in self.data[base..base + self.line_len].iter_mut().zip(values) {
            *slot = v;
        }
        self.tags[line] = Some(row);
    }

    #[inline]
    pub(crate) fn read(&self, y: u32, x: u32, ci: u32) -> f32 {
        let line = y as usize % self.tags.len();
        debug_assert_eq!(self.tags[line], Some(y), "ICache miss on row {y}");
        self.data[line * self.line_len + x as usize * self.ch_in as usize + ci as usize]
    }

    pub(crate) fn occupancy(&self) -> u64 {
        (self.tags.iter().filter(|t| t.is_some()).count() * self.line_len) as u64
    }
}
