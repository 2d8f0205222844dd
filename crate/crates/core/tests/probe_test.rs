// temporary probe
use demblind_core::covmodel::*;
use demblind_core::likelihood::*;
use demblind_core::raster::patch_coords;
use rayon::prelude::*;

fn theta(sx2: f64, h: f64, se2: f64, sc2: f64) -> Theta {
    Theta {
        fbm: FbmParams { sigma_x2: sx2, hurst: h },
        noise: NoiseParams { sigma_e2: se2, sigma_corr2: sc2, shape: NoiseShape::Gaussian },
    }
}

#[test]
fn probe_calibration() {
    let coords = patch_coords(5);
    let ctx = CovContext::new(&coords);
    let t = theta(0.25, 0.5, 4.0, 0.25);
    let prior = HurstPrior { mean: 0.5, sd: 0.1 };
    let n = 500;
    let start = std::time::Instant::now();
    let ests: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let z = sample_patch(&coords, &t, 1000 + k as u64).unwrap();
            estimate_sigma_e2(&z, &ctx, &prior, 0.25, NoiseShape::Gaussian, None)
                .theta_hat
                .noise
                .sigma_e2
        })
        .collect();
    let elapsed = start.elapsed();
    let mean = ests.iter().sum::<f64>() / n as f64;
    let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = ests.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[n / 2];
    let crlb_sd = crlb_ctx(&ctx, &t, ErrorParam::SigmaE2, prior.sd).unwrap();
    panic!(
        "n={n} elapsed={elapsed:?} mean={mean:.4} median={median:.4} empirical_sd={sd:.4} crlb_sd={crlb_sd:.4} ratio={:.4} bias={:.2}%",
        sd / crlb_sd,
        (median - 4.0) / 4.0 * 100.0
    );
}
