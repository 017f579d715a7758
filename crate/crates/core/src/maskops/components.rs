use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::BitMask;

/// Pixel adjacency used for connected-component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Component labels; 0 is background and labels `1..=count` are assigned
/// in row-major order of each component's first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRegions {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl LabeledRegions {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per label; index 0 holds the background count.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count + 1];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn mask_of(&self, label: u32) -> BitMask {
        BitMask::from_vec(
            self.height,
            self.width,
            self.labels.iter().map(|&l| (l == label) as u8).collect(),
        )
        .expect("labels share the source mask dimensions")
    }
}

/// Breadth-first labelling of the foreground of `m`.
pub fn connected_components(m: &BitMask, connectivity: Connectivity) -> LabeledRegions {
    let (h, w) = m.dims();
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    let offsets = connectivity.offsets();

    for start in 0..h * w {
        if m.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (r, c) = ((idx / w) as isize, (idx % w) as isize);
            for &(dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if m.data()[n] != 0 && labels[n] == 0 {
                    labels[n] = count;
                    queue.push_back(n);
                }
            }
        }
    }

    LabeledRegions {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

/// The component with the most pixels; the lowest label wins ties. An empty
/// input yields an empty mask.
pub fn largest_component(m: &BitMask, connectivity: Connectivity) -> BitMask {
    let regions = connected_components(m, connectivity);
    if regions.count() == 0 {
        return BitMask::new(m.height(), m.width()).expect("source mask is valid");
    }
    let sizes = regions.sizes();
    let mut best = 1usize;
    for label in 2..sizes.len() {
        if sizes[label] > sizes[best] {
            best = label;
        }
    }
    regions.mask_of(best as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_full() {
        let empty = BitMask::new(4, 5).unwrap();
        assert_eq!(connected_components(&empty, Connectivity::Four).count(), 0);
        let full = BitMask::full(4, 5).unwrap();
        assert_eq!(connected_components(&full, Connectivity::Four).count(), 1);
        assert_eq!(connected_components(&full, Connectivity::Eight).count(), 1);
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let m = BitMask::from_pixels(3, 3, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(connected_components(&m, Connectivity::Four).count(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).count(), 1);
    }

    #[test]
    fn labels_follow_first_pixel_order() {
        let m = BitMask::from_pixels(3, 4, &[(0, 3), (2, 0), (2, 1)]).unwrap();
        let regions = connected_components(&m, Connectivity::Four);
        assert_eq!(regions.label(0, 3), 1);
        assert_eq!(regions.label(2, 0), 2);
        assert_eq!(regions.label(2, 1), 2);
    }

    #[test]
    fn largest_prefers_size_then_label() {
        // 5-pixel L and a 3-pixel bar
        let m = BitMask::from_pixels(
            5,
            5,
            &[(0, 4), (1, 4), (2, 4), (0, 0), (1, 0), (2, 0), (3, 0), (3, 1)],
        )
        .unwrap();
        let big = largest_component(&m, Connectivity::Four);
        assert_eq!(big.count(), 5);
        assert!(big.get(0, 0));

        let tie = BitMask::from_pixels(4, 4, &[(2, 2), (2, 3), (0, 0), (0, 1)]).unwrap();
        let first = largest_component(&tie, Connectivity::Four);
        assert!(first.get(0, 0) && first.get(0, 1));
        assert_eq!(first.count(), 2);
    }

    #[test]
    fn largest_of_single_and_empty() {
        let m = BitMask::from_pixels(3, 3, &[(1, 1), (1, 2)]).unwrap();
        assert_eq!(largest_component(&m, Connectivity::Eight), m);
        let e = BitMask::new(3, 3).unwrap();
        assert!(largest_component(&e, Connectivity::Four).is_empty());
    }
}
