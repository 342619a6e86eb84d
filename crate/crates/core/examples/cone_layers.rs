//! The three cone layers applied to the same raw output `z` for a fixed
//! gradient, with the slack of each defining inequality.
//!
//! `cargo run --example cone_layers`

use dissipnet::{ConeSpec, Tensor};

fn main() -> dissipnet::Result<()> {
    let g = Tensor::vector(vec![3.0, 4.0]);
    let cones = [
        ("half-space, absolute", ConeSpec::half_space(2.0)?),
        ("half-space, relative", ConeSpec::half_space_relative(0.5)?),
        ("bounded", ConeSpec::bounded(0.2, 1.5)?),
    ];
    let raws = [
        vec![-1.0, 0.5],
        vec![0.3, 0.4],
        vec![20.0, -5.0],
        vec![0.0, 0.0],
    ];
    println!("g = {:?}, |g| = {}", g.data(), g.norm());
    for (name, cone) in cones {
        println!("\n{name}: {:?}", cone.mode);
        for z in &raws {
            let z = Tensor::vector(z.clone());
            let d = cone.enforce(&z, &g)?;
            let (inner, norm) = cone.slack(&d, &g)?;
            let cos = d.dot(&g)? / (d.norm() * g.norm());
            println!(
                "  z = {:>12?} -> d = [{:8.4}, {:8.4}]  <d,g> slack {inner:+.3e}{}  cos {cos:.4}",
                z.data(),
                d.data()[0],
                d.data()[1],
                norm.map_or(String::new(), |n| format!(", norm slack {n:+.3e}")),
            );
        }
    }
    Ok(())
}
