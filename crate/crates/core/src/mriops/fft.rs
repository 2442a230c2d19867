use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::ComplexGrid;

/// Planned centered, orthonormal 2-D DFT for one grid size.
///
/// The centered transform is `fftshift(dft(ifftshift(x))) / sqrt(H W)`, so
/// the zero frequency sits at `(H / 2, W / 2)` (integer division) in both
/// domains and the transform preserves the Euclidean norm.
pub struct Fft2c {
    height: usize,
    width: usize,
    rows: [Arc<dyn Fft<f64>>; 2],
    cols: [Arc<dyn Fft<f64>>; 2],
}

impl Fft2c {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2c {
            height,
            width,
            rows: [planner.plan_fft_forward(width), planner.plan_fft_inverse(width)],
            cols: [planner.plan_fft_forward(height), planner.plan_fft_inverse(height)],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Transforms `grid` in place.
    pub fn process(&self, grid: &mut ComplexGrid, inverse: bool) {
        assert_eq!(grid.dims(), (self.height, self.width), "plan size mismatch");
        let (h, w) = (self.height, self.width);
        let dir = usize::from(inverse);
        let data = grid.data_mut();

        // ifftshift into a scratch buffer, laid out transposed so the column
        // transforms run on contiguous memory first.
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for r in 0..h {
            let sr = (r + h / 2) % h;
            for c in 0..w {
                let sc = (c + w / 2) % w;
                t[c * h + r] = data[sr * w + sc];
            }
        }
        self.cols[dir].process(&mut t);
        for r in 0..h {
            for c in 0..w {
                data[r * w + c] = t[c * h + r];
            }
        }
        self.rows[dir].process(data);

        // fftshift back out, with the orthonormal scale.
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for r in 0..h {
            let dr = (r + h / 2) % h;
            for c in 0..w {
                let dc = (c + w / 2) % w;
                t[dr * w + dc] = data[r * w + c] * scale;
            }
        }
        data.copy_from_slice(&t);
    }

    pub fn forward(&self, grid: &ComplexGrid) -> ComplexGrid {
        let mut out = grid.clone();
        self.process(&mut out, false);
        out
    }

    pub fn inverse(&self, grid: &ComplexGrid) -> ComplexGrid {
        let mut out = grid.clone();
        self.process(&mut out, true);
        out
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Arc<Fft2c>>> = RefCell::new(HashMap::new());
}

/// Cached plan for the given size, shared within the current thread.
pub fn plan(height: usize, width: usize) -> Arc<Fft2c> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((height, width))
            .or_insert_with(|| Arc::new(Fft2c::new(height, width)))
            .clone()
    })
}

/// Centered orthonormal 2-D DFT (or its inverse).
pub fn fft2c(img: &ComplexGrid, inverse: bool) -> ComplexGrid {
    let p = plan(img.height(), img.width());
    let mut out = img.clone();
    p.process(&mut out, inverse);
    out
}
