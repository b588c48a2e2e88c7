//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Every oracle below is written independently of the
//! library code it checks.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadseg_core::autograd::{grad_check, Mode, RunningStats, Tape, Tensor, Var, BN_EPS};
use roadseg_core::data::{
    augment_brightness, augment_crop_zoom, augment_saturation, auto_orient, rasterize_polygon,
    resize_with_annotations, split_dataset, synthetic::synthetic_scene, BinaryMask, DatasetManifest, ImageRecord,
    ImageSample,
};
use roadseg_core::detection::{ciou_loss, dfl_loss, iou, nms, BoundingBox, Detection, GroundTruth};
use roadseg_core::gan::{striped_images, train_gan, GanConfig};
use roadseg_core::metrics::{average_precision, detection_confusion_matrix, ImageBoxes};
use roadseg_core::segmentation::{
    hungarian_match, mask_cls_loss, per_pixel_ce, GroundTruthSegments, GtSegment, MaskClsConfig,
    SegmentationPrediction,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_criterion(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id} {name}: {detail} [{secs:.1} s]");
    result.is_ok()
}

// ---------------------------------------------------------------- 1

type Builder = fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&Tape, &[Var]) -> roadseg_core::Result<Var>>);

fn op_cases() -> Vec<(&'static str, f64, Builder)> {
    fn rn(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::randn(shape, 1.0, r)
    }
    vec![
        ("dense", 1e-6, |r| (vec![rn(r, &[3, 4]), rn(r, &[4, 2]), rn(r, &[2])], Box::new(|t, v| t.dense(v[0], v[1], v[2])))),
        ("conv2d", 1e-6, |r| (vec![rn(r, &[1, 2, 5, 5]), rn(r, &[3, 2, 3, 3])], Box::new(|t, v| t.conv2d(v[0], v[1], 2, 1)))),
        ("conv2d stride 1", 1e-6, |r| (vec![rn(r, &[2, 2, 4, 4]), rn(r, &[2, 2, 3, 3])], Box::new(|t, v| t.conv2d(v[0], v[1], 1, 1)))),
        ("channel_bias", 1e-6, |r| (vec![rn(r, &[2, 3, 2, 2]), rn(r, &[3])], Box::new(|t, v| t.channel_bias(v[0], v[1])))),
        ("upsample", 1e-6, |r| (vec![rn(r, &[1, 2, 3, 2])], Box::new(|t, v| t.upsample2d_nearest(v[0], 2)))),
        ("batchnorm train", 1e-5, |r| {
            (
                vec![rn(r, &[3, 2, 3, 3]), rn(r, &[2]), rn(r, &[2])],
                Box::new(|t, v| t.batchnorm2d(v[0], v[1], v[2], BN_EPS, Mode::Train, &mut RunningStats::new(2))),
            )
        }),
        ("batchnorm eval", 1e-5, |r| {
            (
                vec![rn(r, &[2, 2, 2, 2]), rn(r, &[2]), rn(r, &[2])],
                Box::new(|t, v| {
                    let mut s = RunningStats {
                        mean: vec![0.1, -0.4],
                        var: vec![0.8, 2.0],
                        momentum: 0.1,
                    };
                    t.batchnorm2d(v[0], v[1], v[2], BN_EPS, Mode::Eval, &mut s)
                }),
            )
        }),
        ("relu", 1e-6, |r| (vec![rn(r, &[10])], Box::new(|t, v| Ok(t.relu(v[0]))))),
        ("leaky_relu", 1e-6, |r| (vec![rn(r, &[10])], Box::new(|t, v| t.leaky_relu(v[0], 0.2)))),
        ("sigmoid", 1e-6, |r| (vec![rn(r, &[10])], Box::new(|t, v| Ok(t.sigmoid(v[0]))))),
        ("softmax rows", 1e-6, |r| (vec![rn(r, &[3, 4])], Box::new(|t, v| t.softmax(v[0], 1)))),
        ("softmax cols", 1e-6, |r| (vec![rn(r, &[3, 4])], Box::new(|t, v| t.softmax(v[0], 0)))),
        ("log_softmax", 1e-6, |r| (vec![rn(r, &[2, 5])], Box::new(|t, v| Ok(t.log_softmax(v[0]))))),
        ("exp", 1e-6, |r| (vec![rn(r, &[6])], Box::new(|t, v| Ok(t.exp(v[0]))))),
        ("log", 1e-6, |r| (vec![rn(r, &[6]).map(|x| x.abs() + 0.3)], Box::new(|t, v| Ok(t.log(v[0]))))),
        ("log_clamped", 1e-6, |r| (vec![rn(r, &[6]).map(|x| x.abs() + 0.3)], Box::new(|t, v| Ok(t.log_clamped(v[0], 1e-12))))),
        ("dropout", 1e-6, |r| {
            let seed: u64 = r.random();
            (
                vec![rn(r, &[16])],
                Box::new(move |t, v| t.dropout(v[0], 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed))),
            )
        }),
        ("bce", 1e-6, |r| {
            let y = Tensor::from_fn(&[6], |i| ((i * 7) % 3 == 0) as u8 as f64);
            (vec![rn(r, &[6])], Box::new(move |t, v| t.bce_loss(t.sigmoid(v[0]), &y)))
        }),
        ("add sub mul", 1e-6, |r| {
            (vec![rn(r, &[5]), rn(r, &[5])], Box::new(|t, v| t.mul(t.add(v[0], v[1])?, t.sub(v[0], v[1])?)))
        }),
        ("div", 1e-6, |r| (vec![rn(r, &[5]), rn(r, &[5]).map(|x| x.abs() + 0.5)], Box::new(|t, v| t.div(v[0], v[1])))),
        ("minimum maximum", 1e-6, |r| {
            (vec![rn(r, &[8]), rn(r, &[8])], Box::new(|t, v| t.add(t.minimum(v[0], v[1])?, t.maximum(v[0], v[1])?)))
        }),
        ("atan2", 1e-6, |r| (vec![rn(r, &[6]), rn(r, &[6]).map(|x| x.abs() + 0.5)], Box::new(|t, v| t.atan2(v[0], v[1])))),
        ("scalar ops", 1e-6, |r| {
            (vec![rn(r, &[6])], Box::new(|t, v| Ok(t.neg(t.square(t.mul_scalar(t.add_scalar(v[0], 0.7), 1.3))))))
        }),
        ("sum mean", 1e-6, |r| (vec![rn(r, &[2, 3])], Box::new(|t, v| t.mul(t.sum(v[0]), t.mean(v[0]))))),
        ("matmul", 1e-6, |r| (vec![rn(r, &[3, 4]), rn(r, &[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1])))),
        ("transpose", 1e-6, |r| (vec![rn(r, &[3, 4])], Box::new(|t, v| t.transpose(v[0])))),
        ("reshape flatten", 1e-6, |r| {
            (vec![rn(r, &[2, 2, 3])], Box::new(|t, v| t.flatten(t.reshape(v[0], &[2, 6])?)))
        }),
        ("gather", 1e-6, |r| (vec![rn(r, &[6])], Box::new(|t, v| t.gather(v[0], &[4, 1, 4, 0])))),
        ("row", 1e-6, |r| (vec![rn(r, &[3, 4])], Box::new(|t, v| t.row(v[0], 1)))),
    ]
}

fn criterion_1() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    for (name, tol, build) in op_cases() {
        for seed in 0..10 {
            let (inputs, f) = build(&mut ChaCha8Rng::seed_from_u64(500 + seed));
            let err = grad_check(f, &inputs, 1e-5).map_err(|e| format!("{name}: {e}"))?;
            ensure(err < tol, || format!("{name} seed {seed}: relative error {err:.3e} >= {tol:.0e}"))?;
            if err > worst.1 {
                worst = (name.to_string(), err);
            }
        }
    }
    Ok(format!("{} ops x 10 seeds, worst {:.2e} ({})", op_cases().len(), worst.1, worst.0))
}

// ---------------------------------------------------------------- 2, 3

fn injective_maps(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..rows {
        let mut next = vec![];
        for m in &out {
            for c in (0..cols).filter(|c| !m.contains(c)) {
                let mut n: Vec<usize> = m.clone();
                n.push(c);
                next.push(n);
            }
        }
        out = next;
    }
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for t in 0..200 {
        let rows = rng.random_range(1..=5);
        let cols = rng.random_range(rows..=7);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| if t % 4 == 0 { rng.random_range(0..3) as f64 } else { rng.random_range(0.0..10.0) })
                    .collect()
            })
            .collect();
        let best = injective_maps(rows, cols)
            .iter()
            .map(|m| m.iter().enumerate().map(|(j, &i)| cost[j][i]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let a = hungarian_match(&cost).map_err(|e| e.to_string())?;
        let got: f64 = a.sigma.iter().enumerate().map(|(j, &i)| cost[j][i]).sum();
        ensure(got == best, || format!("matrix {t}: cost {got} vs optimum {best}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("200 matrices up to 5x7 equal the exhaustive optimum in {secs:.2} s"))
}

fn bce_mean(p: &[f64], y: &[f64]) -> f64 {
    let eps = 1e-7;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / p.len() as f64
}

fn dice(p: &[f64], y: &[f64]) -> f64 {
    let inter: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = p.iter().sum::<f64>() + y.iter().sum::<f64>();
    if denom == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / denom
    }
}

fn criterion_3() -> Outcome {
    let cfg = MaskClsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (k, h, w) = (3usize, 3usize, 3usize);
    let mut fixtures = vec![(3usize, 2usize)];
    fixtures.extend((0..80).map(|_| {
        let n = rng.random_range(1..=5);
        (n, rng.random_range(0..=n))
    }));
    let mut worst = 0.0f64;
    for (t, &(n, g)) in fixtures.iter().enumerate() {
        let mut probs = vec![];
        for _ in 0..n {
            let raw: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / s));
        }
        let masks: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(0.02..0.98)).collect();
        let pred = SegmentationPrediction::new(k, h, w, probs.clone(), masks.clone()).map_err(|e| e.to_string())?;
        let segs: Vec<(usize, Vec<bool>)> = (0..g)
            .map(|_| (rng.random_range(0..k), (0..h * w).map(|_| rng.random_bool(0.5)).collect()))
            .collect();
        let gt = GroundTruthSegments::new(
            h,
            w,
            segs.iter()
                .map(|(c, m)| GtSegment {
                    class_id: *c,
                    mask: BinaryMask::from_vec(h, w, m.clone()).unwrap(),
                })
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let (loss, a) = mask_cls_loss(&pred, &gt, &cfg).map_err(|e| e.to_string())?;

        // matching picks the cheapest assignment; the loss is evaluated there
        let p = |i: usize, c: usize| probs[i * (k + 1) + c];
        let m = |i: usize| &masks[i * h * w..(i + 1) * h * w];
        let mut best: Option<(f64, f64, Vec<usize>)> = None;
        for sigma in injective_maps(g, n) {
            let mut cost = 0.0;
            let mut l = 0.0;
            for (j, &i) in sigma.iter().enumerate() {
                let y: Vec<f64> = segs[j].1.iter().map(|&b| b as u8 as f64).collect();
                let lm = bce_mean(m(i), &y) + dice(m(i), &y);
                cost += -p(i, segs[j].0) + lm;
                l += -p(i, segs[j].0).ln() + lm;
            }
            for i in (0..n).filter(|i| !sigma.contains(i)) {
                l += -cfg.null_weight * p(i, k).ln();
            }
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, l, sigma));
            }
        }
        let (_, want, sigma) = best.unwrap();
        ensure(a.sigma == sigma, || format!("fixture {t}: matching {:?} vs {sigma:?}", a.sigma))?;
        worst = worst.max((loss - want).abs());
        ensure((loss - want).abs() < 1e-9, || format!("fixture {t}: loss {loss} vs {want}"))?;
    }

    // per-pixel cross-entropy, summed over a 2x2 image with three classes
    let probs = Tensor::new(
        vec![3, 2, 2],
        vec![
            0.7, 0.1, 0.2, 0.25, //
            0.2, 0.6, 0.3, 0.25, //
            0.1, 0.3, 0.5, 0.5,
        ],
    )
    .unwrap();
    let gt = [0, 2, 1, 2];
    let hand = -(0.7f64.ln() + 0.3f64.ln() + 0.3f64.ln() + 0.5f64.ln());
    let got = per_pixel_ce(&probs, &gt).map_err(|e| e.to_string())?;
    ensure((got - hand).abs() < 1e-9, || format!("per-pixel CE {got} vs {hand}"))?;
    let uniform = per_pixel_ce(&Tensor::full(&[4, 1, 1], 0.25), &[3]).map_err(|e| e.to_string())?;
    ensure((uniform - 4f64.ln()).abs() < 1e-9, || format!("uniform CE {uniform}"))?;
    let one_hot = per_pixel_ce(&Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), &[0, 1]).unwrap();
    ensure(one_hot.abs() < 1e-9, || format!("one-hot CE {one_hot}"))?;
    Ok(format!(
        "{} mask-classification fixtures, worst loss gap {worst:.1e}; per-pixel CE fixtures exact",
        fixtures.len()
    ))
}

// ---------------------------------------------------------------- 4

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let i = iw * ih;
    let u = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

/// Envelope area over every distinct recall level reached by some cut-off.
fn oracle_ap(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut curve = vec![];
    for (rank, &d) in order.iter().enumerate() {
        let cand = (0..gts.len())
            .filter(|&g| !used[g] && overlap(&dets[d].bbox, &gts[g].bbox) >= 0.5)
            .fold(None, |acc: Option<usize>, g| match acc {
                Some(b) if overlap(&dets[d].bbox, &gts[b].bbox) >= overlap(&dets[d].bbox, &gts[g].bbox) => Some(b),
                _ => Some(g),
            });
        if let Some(g) = cand {
            used[g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut levels: Vec<f64> = curve.iter().map(|c| c.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    let mut ap = 0.0;
    for r in levels {
        let p = curve.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

fn random_boxes(rng: &mut ChaCha8Rng, span: f64) -> BoundingBox {
    let (x, y) = (rng.random_range(0.0..span), rng.random_range(0.0..span));
    let (w, h) = (rng.random_range(2.0..9.0), rng.random_range(2.0..9.0));
    bx(x, y, x + w, y + h)
}

fn quadratic_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = vec![];
    while !alive.is_empty() {
        // highest confidence, lowest index on ties
        let best = *alive
            .iter()
            .max_by(|&&a, &&b| dets[a].confidence.total_cmp(&dets[b].confidence).then(b.cmp(&a)))
            .unwrap();
        kept.push(dets[best]);
        alive.retain(|&j| {
            j != best && !(dets[j].class_id == dets[best].class_id && overlap(&dets[j].bbox, &dets[best].bbox) > thr)
        });
    }
    kept
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let nd = rng.random_range(0..=20);
        let ng = rng.random_range(0..=10);
        let gts: Vec<GroundTruth> = (0..ng).map(|_| GroundTruth { bbox: random_boxes(&mut rng, 25.0), class_id: 0 }).collect();
        let dets: Vec<Detection> = (0..nd)
            .map(|_| {
                // most detections jitter a ground-truth box so that matches occur
                let bbox = if ng > 0 && rng.random_bool(0.7) {
                    let g = gts[rng.random_range(0..ng)].bbox;
                    let d = rng.random_range(-1.5..1.5);
                    bx(g.x1 + d, g.y1 - d, g.x2 + d, g.y2)
                } else {
                    random_boxes(&mut rng, 25.0)
                };
                Detection {
                    bbox,
                    class_id: 0,
                    confidence: (rng.random_range(0..10) as f64) / 10.0,
                }
            })
            .collect();
        let got = average_precision(&dets, &gts, 0.5);
        let want = oracle_ap(&dets, &gts);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() < 1e-9, || format!("AP set {t}: {got} vs {want}"))?;
    }
    let tp_fp_tp = [
        Detection { bbox: bx(0.0, 0.0, 10.0, 10.0), class_id: 0, confidence: 0.9 },
        Detection { bbox: bx(50.0, 50.0, 60.0, 60.0), class_id: 0, confidence: 0.8 },
        Detection { bbox: bx(20.0, 20.0, 30.0, 30.0), class_id: 0, confidence: 0.7 },
    ];
    let two_gts = [
        GroundTruth { bbox: bx(0.0, 0.0, 10.0, 10.0), class_id: 0 },
        GroundTruth { bbox: bx(20.0, 20.0, 30.0, 30.0), class_id: 0 },
    ];
    let fixture = average_precision(&tp_fp_tp, &two_gts, 0.5);
    ensure((fixture - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9, || format!("TP/FP/TP fixture AP {fixture}"))?;

    for t in 0..100 {
        let dets: Vec<Detection> = (0..rng.random_range(0..40))
            .map(|_| Detection {
                bbox: random_boxes(&mut rng, 30.0),
                class_id: rng.random_range(0..3),
                confidence: (rng.random_range(0..15) as f64) / 15.0,
            })
            .collect();
        ensure(nms(&dets, 0.5) == quadratic_nms(&dets, 0.5), || format!("NMS set {t} differs"))?;
    }

    // conservation: every ground truth lands in its row, every kept
    // detection in its column, and each match uses one of each
    let k = 4;
    let mut fixtures: Vec<Vec<ImageBoxes>> = vec![];
    let perfect: Vec<ImageBoxes> = (0..k)
        .map(|c| {
            let b = bx(c as f64 * 10.0, 0.0, c as f64 * 10.0 + 8.0, 8.0);
            ImageBoxes {
                detections: vec![Detection { bbox: b, class_id: c, confidence: 0.9 }],
                ground_truth: vec![GroundTruth { bbox: b, class_id: c }],
            }
        })
        .collect();
    let cm = detection_confusion_matrix(&perfect, k, 0.5, 0.25);
    for r in 0..=k {
        for c in 0..=k {
            let want = u64::from(r == c && r < k);
            ensure(cm.counts[r][c] == want, || format!("perfect fixture entry ({r},{c}) = {}", cm.counts[r][c]))?;
        }
    }
    fixtures.push(perfect);
    // crack ground truth, guardrail detection at IoU 0.6
    let crossed = vec![ImageBoxes {
        detections: vec![Detection { bbox: bx(0.0, 0.0, 10.0, 6.0), class_id: 3, confidence: 0.8 }],
        ground_truth: vec![GroundTruth { bbox: bx(0.0, 0.0, 10.0, 10.0), class_id: 0 }],
    }];
    ensure((overlap(&crossed[0].detections[0].bbox, &crossed[0].ground_truth[0].bbox) - 0.6).abs() < 1e-12, || "setup".into())?;
    let cm = detection_confusion_matrix(&crossed, k, 0.5, 0.25);
    ensure(cm.counts[0][3] == 1, || format!("crack/guardrail entry {}", cm.counts[0][3]))?;
    fixtures.push(crossed);
    for _ in 0..50 {
        fixtures.push(
            (0..3)
                .map(|_| ImageBoxes {
                    detections: (0..rng.random_range(0..12))
                        .map(|_| Detection {
                            bbox: random_boxes(&mut rng, 20.0),
                            class_id: rng.random_range(0..k),
                            confidence: rng.random_range(0.0..1.0),
                        })
                        .collect(),
                    ground_truth: (0..rng.random_range(0..8))
                        .map(|_| GroundTruth { bbox: random_boxes(&mut rng, 20.0), class_id: rng.random_range(0..k) })
                        .collect(),
                })
                .collect(),
        );
    }
    for (t, images) in fixtures.iter().enumerate() {
        let cm = detection_confusion_matrix(images, k, 0.5, 0.25);
        for c in 0..k {
            let gts = images.iter().flat_map(|i| &i.ground_truth).filter(|g| g.class_id == c).count() as u64;
            let dets = images
                .iter()
                .flat_map(|i| &i.detections)
                .filter(|d| d.class_id == c && d.confidence >= 0.25)
                .count() as u64;
            ensure(cm.counts[c].iter().sum::<u64>() == gts, || format!("fixture {t}: row {c} sum"))?;
            ensure(cm.counts.iter().map(|r| r[c]).sum::<u64>() == dets, || format!("fixture {t}: column {c} sum"))?;
        }
        let n_gt = images.iter().map(|i| i.ground_truth.len() as u64).sum::<u64>();
        let n_det = images
            .iter()
            .flat_map(|i| &i.detections)
            .filter(|d| d.confidence >= 0.25)
            .count() as u64;
        ensure(cm.counts[k][k] == 0, || format!("fixture {t}: background/background entry"))?;
        let matched: u64 = (0..k).map(|r| (0..k).map(|c| cm.counts[r][c]).sum::<u64>()).sum();
        ensure(cm.total() == n_gt + n_det - matched, || format!("fixture {t}: total"))?;
    }
    Ok(format!(
        "AP oracle on 100 sets (worst {worst:.1e}), fixture AP {fixture:.4}; NMS 100/100; conservation on {} fixtures",
        fixtures.len()
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let loss = ciou_loss(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0));
    let hand = 1.0 - 1.0 / 7.0 + 2.0 / 18.0;
    ensure((loss - hand).abs() < 1e-6, || format!("CIoU loss {loss} vs {hand}"))?;
    ensure((loss - 0.9683).abs() < 1e-4, || format!("CIoU loss {loss} vs 0.9683"))?;
    let dfl = dfl_loss(&[0.0, 0.0, 0.5, 0.5], 2.5).map_err(|e| e.to_string())?;
    ensure((dfl - 2f64.ln()).abs() < 1e-6, || format!("DFL {dfl} vs ln 2"))?;
    ensure((iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12, || "IoU".into())?;
    Ok(format!("CIoU {loss:.6}, DFL {dfl:.6}"))
}

// ---------------------------------------------------------------- 6

fn gan_config() -> GanConfig {
    GanConfig {
        image_size: (16, 16),
        base_channels: 8,
        batch_size: 16,
        epochs: 1000,
        max_steps: Some(500),
        seed: 42,
        ..GanConfig::default()
    }
}

fn criterion_6() -> Outcome {
    let cfg = gan_config();
    let images = striped_images(&mut ChaCha8Rng::seed_from_u64(42), 64, 16, 16);
    let start = Instant::now();
    let a = train_gan(&images, &cfg, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let b = train_gan(&images, &cfg, |_, _| Ok(())).map_err(|e| e.to_string())?;
    ensure(a.log.len() == 500, || format!("{} steps logged", a.log.len()))?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let d: Vec<f64> = a.log.iter().map(|r| r.d_loss).collect();
    let fake: Vec<f64> = a.log.iter().map(|r| r.fake_score).collect();
    let (d_first, d_last) = (mean(&d[..50]), mean(&d[450..]));
    let (fake_first, fake_last) = (mean(&fake[..50]), mean(&fake[450..]));
    let bits = |log: &[roadseg_core::gan::StepRecord]| -> Vec<u64> {
        log.iter()
            .flat_map(|r| [r.d_loss, r.g_loss, r.real_score, r.fake_score])
            .map(f64::to_bits)
            .collect()
    };
    let same = bits(&a.log) == bits(&b.log) && a.generator.params == b.generator.params;
    let summary = format!(
        "d_loss first/last 50 {d_first:.4}/{d_last:.4}, fake score first/last 50 {fake_first:.3}/{fake_last:.3}, \
         reproducible {same}, {secs:.0} s per run"
    );
    ensure(d_last < d_first, || format!("discriminator loss did not fall; {summary}"))?;
    ensure(fake_last > 0.3, || format!("fake score stayed low; {summary}"))?;
    ensure(same, || format!("runs differ; {summary}"))?;
    ensure(secs < 300.0, || format!("too slow; {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- CLI helpers

fn roadseg(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_roadseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        let err = String::from_utf8_lossy(&out.stderr);
        Err(format!("`roadseg {}` exited {:?}: {}", args.join(" "), out.status.code(), err.trim()))
    }
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// `epoch_log.csv` rows as column-name → value maps.
fn read_epoch_log(path: &Path) -> Result<Vec<BTreeMap<String, f64>>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty log")?.split(',').map(String::from).collect();
    lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(h, v)| Ok((h.clone(), v.parse::<f64>().map_err(|e| e.to_string())?)))
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------- 7

fn criterion_7(tmp: &Path) -> Outcome {
    let out = tmp.join("overfit");
    let start = Instant::now();
    roadseg(&[
        "train-seg", "--out", arg(&out), "--synthetic", "10", "--seed", "7", "--epochs", "100", "--batch-size", "2",
        "--max-steps", "500", "--lr", "0.001",
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let log = read_epoch_log(&out.join("epoch_log.csv"))?;
    let best = log.iter().map(|r| r["mIoU"]).fold(0.0, f64::max);
    let first = log.iter().find(|r| r["mIoU"] >= 0.9).map(|r| r["epoch"] as usize * 5);
    let last = log.last().map(|r| r["mIoU"]).unwrap_or(0.0);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let recorded = run["deviations"].as_array().is_some_and(|d| d.iter().any(|s| s.as_str().unwrap_or("").contains("0.001")));
    let summary = format!(
        "best training mIoU {best:.4} (first >= 0.9 after {} steps), final {last:.4}, lr 1e-3 recorded {recorded}, {secs:.0} s",
        first.map_or("no".into(), |s| s.to_string())
    );
    ensure(best >= 0.9, || summary.clone())?;
    ensure(recorded, || format!("deviation missing from run.json; {summary}"))?;
    ensure(secs < 600.0, || format!("too slow; {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn inside_triangle(t: &[[f64; 2]], x: f64, y: f64) -> bool {
    let side = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let s = [side(t[0], t[1]), side(t[1], t[2]), side(t[2], t[0])];
    s.iter().all(|&v| v > 0.0) || s.iter().all(|&v| v < 0.0)
}

fn same_sample(a: &ImageSample, b: &ImageSample) -> bool {
    a.image.as_raw() == b.image.as_raw() && a.image.dimensions() == b.image.dimensions() && a.record == b.record
}

fn criterion_8() -> Outcome {
    let record = |i: usize| ImageRecord {
        path: format!("img_{i:04}.png"),
        width: 64,
        height: 64,
        orientation: 1,
        annotations: vec![],
    };
    let manifest = DatasetManifest::default().with_images((0..1000).map(record).collect());
    let (tr, va, te) = split_dataset(&manifest, (0.85, 0.10, 0.05), 0).map_err(|e| e.to_string())?;
    let sizes = (tr.images.len(), va.images.len(), te.images.len());
    ensure(sizes == (850, 100, 50), || format!("split sizes {sizes:?}"))?;
    let mut all: Vec<&str> = tr.images.iter().chain(&va.images).chain(&te.images).map(|r| r.path.as_str()).collect();
    all.sort();
    all.dedup();
    ensure(all.len() == 1000, || "split lost or duplicated records".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (24, 20);
    let mut pixels = 0;
    for t in 0..100 {
        let tri: Vec<[f64; 2]> = (0..3)
            .map(|_| [rng.random_range(-4.0..w as f64 + 4.0), rng.random_range(-4.0..h as f64 + 4.0)])
            .collect();
        let mask = rasterize_polygon(&tri, h, w).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let want = inside_triangle(&tri, x as f64 + 0.5, y as f64 + 0.5);
                ensure(mask.get(y, x) == want, || format!("triangle {t}: pixel ({x},{y})"))?;
                pixels += want as usize;
            }
        }
    }

    let mut identities = 0;
    for i in 0..10 {
        let s = synthetic_scene(&mut rng, "s.png", 32, 24, 4);
        let checks = [
            ("auto_orient tag 1", auto_orient(&s)),
            ("resize to own size", resize_with_annotations(&s, 32, 24)),
            ("crop zoom 0", augment_crop_zoom(&s, 0.0, &mut rng)),
            ("brightness 0", augment_brightness(&s, 0.0)),
            ("saturation 0", augment_saturation(&s, 0.0)),
        ];
        for (name, r) in checks {
            let r = r.map_err(|e| format!("{name}: {e}"))?;
            ensure(same_sample(&s, &r), || format!("scene {i}: {name} is not byte-identical"))?;
            identities += 1;
        }
    }
    Ok(format!(
        "split 850/100/50; 100 triangles ({pixels} pixels inside) match the oracle; {identities} neutral augmentations byte-identical"
    ))
}

// ---------------------------------------------------------------- 9

fn expect_files(root: &Path, files: &[&str]) -> Result<usize, String> {
    let missing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::metadata(root.join(f)).map(|m| m.len() == 0).unwrap_or(true))
        .collect();
    ensure(missing.is_empty(), || format!("{} lacks {missing:?}", root.display()))?;
    Ok(files.len())
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .map(|d| d.filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == ext))).count())
        .unwrap_or(0)
}

fn criterion_9(tmp: &Path) -> Outcome {
    let d = |n: &str| -> PathBuf { tmp.join("session").join(n) };
    let mut checked = 0;
    roadseg(&["synth", "--out", arg(&d("data")), "--count", "24", "--seed", "9"])?;

    roadseg(&["stats", "--manifest", arg(&d("data").join("manifest.json")), "--out", arg(&d("stats"))])?;
    checked += expect_files(
        &d("stats"),
        &[
            "histogram.csv",
            "summary.json",
            "run.json",
            "heatmap_0_crack.pgm",
            "heatmap_1_pothole.pgm",
            "heatmap_2_damaged_marking.pgm",
            "heatmap_3_guardrail.pgm",
        ],
    )?;

    roadseg(&["split", "--manifest", arg(&d("data").join("manifest.json")), "--out", arg(&d("split")), "--seed", "9"])?;
    checked += expect_files(&d("split"), &["train.json", "valid.json", "test.json", "run.json"])?;

    roadseg(&[
        "augment", "--manifest", arg(&d("split").join("train.json")), "--out", arg(&d("aug")), "--seed", "9", "--copies", "1",
    ])?;
    checked += expect_files(&d("aug"), &["manifest.json", "run.json"])?;
    let aug_images = count_files(&d("aug").join("images"), "png");
    ensure(aug_images == 2 * 21, || format!("{aug_images} augmented images"))?;

    let gan_toml = tmp.join("gan.toml");
    fs::write(
        &gan_toml,
        "samples = 4\n[model]\nimage_size = [16, 16]\nbase_channels = 8\nbatch_size = 8\nepochs = 20\nmax_steps = 50\n",
    )
    .map_err(|e| e.to_string())?;
    roadseg(&[
        "train-gan", "--config", arg(&gan_toml), "--manifest", arg(&d("aug").join("manifest.json")), "--out", arg(&d("gan")),
    ])?;
    checked += expect_files(
        &d("gan"),
        &[
            "log.csv",
            "generator.ckpt",
            "discriminator.ckpt",
            "samples/final.ppm",
            "samples/epoch_001.ppm",
            "checkpoints/generator_epoch_001.ckpt",
            "checkpoints/discriminator_epoch_001.ckpt",
            "run.json",
        ],
    )?;
    let log = fs::read_to_string(d("gan").join("log.csv")).map_err(|e| e.to_string())?;
    ensure(log.starts_with("step,d_loss,g_loss,real_score,fake_score\n"), || "log.csv header".into())?;
    ensure(log.lines().count() == 51, || format!("log.csv has {} lines", log.lines().count()))?;

    roadseg(&[
        "train-seg",
        "--manifest",
        arg(&d("aug").join("manifest.json")),
        "--val-manifest",
        arg(&d("split").join("valid.json")),
        "--out",
        arg(&d("seg")),
        "--max-steps",
        "50",
        "--epochs",
        "10",
        "--batch-size",
        "4",
    ])?;
    checked += expect_files(&d("seg"), &["epoch_log.csv", "best.ckpt", "final.ckpt", "summary.json", "run.json"])?;
    let preds = count_files(&d("seg").join("predictions"), "pgm");
    ensure(preds > 0 && preds == count_files(&d("seg").join("ground_truth"), "pgm"), || format!("{preds} predictions"))?;

    roadseg(&[
        "eval-masks",
        "--pred",
        arg(&d("seg").join("predictions")),
        "--gt",
        arg(&d("seg").join("ground_truth")),
        "--out",
        arg(&d("eval_masks")),
    ])?;
    let report_files = ["report.json", "per_class.csv", "confusion.csv", "confusion_normalized.csv", "run.json"];
    checked += expect_files(&d("eval_masks"), &report_files)?;

    let dets = tmp.join("dets.csv");
    let gts = tmp.join("gts.csv");
    fs::write(
        &dets,
        "image_id,class_id,x1,y1,x2,y2,confidence\na,0,0,0,10,10,0.9\na,0,50,50,60,60,0.8\na,0,20,20,30,30,0.7\n",
    )
    .map_err(|e| e.to_string())?;
    fs::write(&gts, "image_id,class_id,x1,y1,x2,y2\na,0,0,0,10,10\na,0,20,20,30,30\n").map_err(|e| e.to_string())?;
    roadseg(&["eval-detections", "--detections", arg(&dets), "--ground-truth", arg(&gts), "--out", arg(&d("eval_dets"))])?;
    checked += expect_files(&d("eval_dets"), &report_files)?;
    checked += expect_files(&d("eval_dets"), &["pr_curves.csv"])?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("eval_dets").join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let ap = report["per_class_ap50"][0].as_f64().unwrap_or(-1.0);
    ensure((ap - 5.0 / 6.0).abs() < 1e-9, || format!("fixture AP {ap}"))?;
    Ok(format!("8 commands exited 0; {checked} artifact files present; fixture AP {ap:.4}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let results = [
        run_criterion(1, "gradient suite", criterion_1),
        run_criterion(2, "matching oracle", criterion_2),
        run_criterion(3, "mask-classification loss fidelity", criterion_3),
        run_criterion(4, "metric oracles", criterion_4),
        run_criterion(5, "CIoU/DFL fixtures", criterion_5),
        run_criterion(6, "GAN smoke run", criterion_6),
        run_criterion(7, "segmentation overfit run", || criterion_7(tmp.path())),
        run_criterion(8, "data pipeline", criterion_8),
        run_criterion(9, "end-to-end CLI", || criterion_9(tmp.path())),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
