use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Complex 3D transform on an n³ cube stored x-fastest.
///
/// Forward divides by n³, so the result holds Fourier amplitudes:
/// f(x) = Σ_k f̂(k) e^{ik·x}.
pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft3({})", self.n)
    }
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<Fft3>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft3 {
    pub fn shared(n: usize) -> Arc<Fft3> {
        let mut map = cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft3 {
                    n,
                    fwd: planner.plan_fft_forward(n),
                    inv: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let n2 = n * n;
        assert_eq!(data.len(), n2 * n);
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // x lines are contiguous: one batched call
        plan.process_with_scratch(data, &mut scratch);

        // y lines: transpose each z slab so y becomes fastest
        let mut tmp = vec![Complex64::default(); n2];
        for z in 0..n {
            let slab = &mut data[z * n2..(z + 1) * n2];
            for y in 0..n {
                for x in 0..n {
                    tmp[x * n + y] = slab[y * n + x];
                }
            }
            plan.process_with_scratch(&mut tmp, &mut scratch);
            for x in 0..n {
                for y in 0..n {
                    slab[y * n + x] = tmp[x * n + y];
                }
            }
        }

        // z lines: gather the x-z plane at fixed y
        for y in 0..n {
            for z in 0..n {
                let row = &data[y * n + z * n2..y * n + z * n2 + n];
                for (x, v) in row.iter().enumerate() {
                    tmp[x * n + z] = *v;
                }
            }
            plan.process_with_scratch(&mut tmp, &mut scratch);
            for z in 0..n {
                let row = &mut data[y * n + z * n2..y * n + z * n2 + n];
                for (x, v) in row.iter_mut().enumerate() {
                    *v = tmp[x * n + z];
                }
            }
        }
    }
}
