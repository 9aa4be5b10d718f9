//! Dev measurement: alignment quality of the frozen encoder pair.

use greenplm_core::encoders::*;
use greenplm_core::par::map_indexed;

#[test]
#[ignore]
fn measure_alignment() {
    let enc = FrozenEncoders::new(EncoderConfig::default()).unwrap();
    let world = synth_world(1000, 0, enc.latent_map()).unwrap();

    let idxs: Vec<usize> = (0..world.objects.len()).collect();
    let results: Vec<(bool, Vec<f64>, Vec<f64>)> = map_indexed(&idxs, |i, _| {
        let spec = &world.objects[i];
        let cloud = sample_point_cloud(spec, 1024, 0).unwrap();
        let correct = enc.estimate_category(&cloud) == spec.category;
        let pt = enc.point_encode(&cloud).unwrap();
        let tx = enc.text_encode(&world.captions[i]);
        (correct, tx.class_token.data().to_vec(), pt.class_token.data().to_vec())
    });

    let n = results.len();
    let n_correct = results.iter().filter(|r| r.0).count();
    println!("shape classification: {}/{} = {:.3}", n_correct, n, n_correct as f64 / n as f64);

    // confusion detail
    let mut confusion = std::collections::BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        if !r.0 {
            let spec = &world.objects[i];
            let cloud = sample_point_cloud(spec, 1024, 0).unwrap();
            let est = enc.estimate_category(&cloud);
            *confusion.entry((spec.category.word(), est.word())).or_insert(0usize) += 1;
        }
    }
    for ((a, b), c) in &confusion {
        println!("  {} -> {}: {}", a, b, c);
    }

    // same-object cosine
    let mut same: Vec<f64> = results.iter().map(|r| cosine(&r.1, &r.2)).collect();
    same.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("same-object cosine: median {:.4}, p05 {:.4}, min {:.4}",
        same[n / 2], same[n / 20], same[0]);

    // nearest-pair property: cos(text_i, point_i) > cos(text_i, point_j) for all j
    let wins = map_indexed(&idxs, |i, _| {
        let own = cosine(&results[i].1, &results[i].2);
        for (j, r) in results.iter().enumerate() {
            if j != i && cosine(&results[i].1, &r.2) >= own {
                return 0usize;
            }
        }
        1usize
    });
    let win_count: usize = wins.iter().sum();
    println!("nearest-pair wins: {}/{} = {:.3}", win_count, n, win_count as f64 / n as f64);

    // AUC same vs cross (subsample cross pairs)
    let mut same_scores = Vec::new();
    let mut cross_scores = Vec::new();
    for i in 0..n {
        same_scores.push(cosine(&results[i].1, &results[i].2));
        let j = (i * 7 + 13) % n;
        if j != i {
            cross_scores.push(cosine(&results[i].1, &results[j].2));
        }
        let j2 = (i * 31 + 211) % n;
        if j2 != i {
            cross_scores.push(cosine(&results[i].1, &results[j2].2));
        }
    }
    let mut correct_order = 0usize;
    let mut total = 0usize;
    for &s in &same_scores {
        for &c in &cross_scores {
            total += 1;
            if s > c {
                correct_order += 1;
            } else if s == c {
                // count half
            }
        }
    }
    println!("AUC approx: {:.4}", correct_order as f64 / total as f64);
}
