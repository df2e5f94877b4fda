use std::time::Instant;
use trice::nn::*;
use trice::rng::stream_rng;
use trice::tasks::Vocabulary;

fn main() {
    let vocab = Vocabulary::standard().size();
    let cfg = ModelConfig::desk_default(vocab);
    let mut rng = stream_rng(1, "bench");
    let params = ParameterSet::<f32>::init_random(cfg, &mut rng);
    let tokens: Vec<u32> = (0..180u32).map(|i| 4 + (i % 80)).collect();
    let target: Vec<u32> = (0..30u32).map(|i| 4 + (i % 70)).collect();

    // forward-only timing
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let _ = forward(&params, &tokens).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;
    println!("tape forward  (len 180): {:.2} ms", fwd * 1e3);

    // forward+backward timing
    let t0 = Instant::now();
    for _ in 0..reps {
        let (mut tape, node) = nll_loss(&params, &tokens, &target).unwrap();
        let _ = tape.backward(node, &params.shapes()).unwrap();
    }
    let fb = t0.elapsed().as_secs_f64() / reps as f64;
    println!("fwd+bwd (len 210): {:.2} ms", fb * 1e3);

    // incremental decode timing
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Generator::new(&params);
        for &t in &tokens { let _ = g.append(t).unwrap(); }
    }
    let inc = t0.elapsed().as_secs_f64() / reps as f64;
    println!("incremental prefill 180 tok: {:.2} ms ({:.1} us/tok)", inc * 1e3, inc * 1e6 / 180.0);

    // sft item: prompt 180, target 20, pass2 (prompt 215, answer 8)
    {
        use trice::nn::*;
        let prompt = tokens.clone();
        let tgt: Vec<u32> = (0..20u32).map(|i| 4 + (i % 70)).collect();
        let mut p2 = prompt.clone(); p2.extend((0..35u32).map(|i| 4 + (i % 60))); p2.push(3);
        let ans: Vec<u32> = (0..8u32).map(|i| 4 + i).collect();
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let prefix = encode_prefix(&mut tape, &bound, &prompt[..prompt.len()-1]);
            let n1 = nll_node_shared(&mut tape, &bound, &params, &prefix, &prompt, &tgt).unwrap();
            let n2 = nll_node_shared(&mut tape, &bound, &params, &prefix, &p2, &ans).unwrap();
            let s = tape.sum_scalars(vec![n1, n2]);
            let loss = tape.scale(s, 0.001);
            let _ = tape.backward(loss, &params.shapes()).unwrap();
        }
        println!("sft item (shared prefix, incl pass2): {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

        // rlef item: + 5 candidate scores (resp ~18 tok)
        let resps: Vec<Vec<u32>> = (0..5).map(|k| (0..18u32).map(|i| 4 + ((i+k) % 70)).collect()).collect();
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let prefix = encode_prefix(&mut tape, &bound, &prompt[..prompt.len()-1]);
            let n1 = nll_node_shared(&mut tape, &bound, &params, &prefix, &prompt, &tgt).unwrap();
            let n2 = nll_node_shared(&mut tape, &bound, &params, &prefix, &p2, &ans).unwrap();
            let sft = tape.sum_scalars(vec![n1, n2]);
            let mut scores = Vec::new();
            for r in &resps {
                scores.push(score_node_shared(&mut tape, &bound, &params, &prefix, &prompt, r).unwrap());
            }
            let rank = tape.rank_hinge(scores, vec![0,1,2,3,4]).unwrap();
            let sr = tape.scale(rank, 0.1);
            let ss = tape.scale(sft, 0.001);
            let loss = tape.sum_scalars(vec![sr, ss]);
            let _ = tape.backward(loss, &params.shapes()).unwrap();
        }
        println!("rlef item (5 cands, shared prefix): {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);
    }

    // raw matmul GFLOP/s: [180,64]x[64,256]
    let a = Tensor::new(vec![0.5f32; 180*64], vec![180,64]);
    let b = Tensor::new(vec![0.25f32; 64*256], vec![64,256]);
    let t0 = Instant::now();
    let reps2 = 200;
    for _ in 0..reps2 { let c = trice::nn::matmul_pub(&a, &b); std::hint::black_box(&c); }
    let mm = t0.elapsed().as_secs_f64() / reps2 as f64;
    let flops = 2.0 * 180.0 * 64.0 * 256.0;
    println!("matmul 180x64x256: {:.3} ms = {:.2} GFLOP/s", mm*1e3, flops / mm / 1e9);
}

// Realistic per-item training costs appended as a second phase.
#[allow(dead_code)]
fn phase2() {}
