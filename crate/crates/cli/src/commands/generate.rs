//! `pulsefield generate`: synthesize the clean and corrupted datasets, plus
//! optional particle-image pairs.

use pulsefield_core::io::{write_flowfield, write_pgm, Manifest};
use pulsefield_core::piv::{render_particles_with, RenderSpec};
use pulsefield_core::synthdata::{corrupt_with, generate_field, occlude, CorruptSpec, GridSpec};

use super::{ensure_out_dir, CliError, Ctx};

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let ds = ctx
        .cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::config("generate needs a 'dataset' section or a preset"))?;
    let womersley = ds
        .womersley
        .clone()
        .unwrap_or_default()
        .build()?;
    let grid = ds.grid.clone().unwrap_or_else(GridSpec::default);
    let periods = ds.periods.unwrap_or(1);
    let seed = ctx.cfg.seed();
    let clean = generate_field(&womersley, &grid, periods)?;
    let spec = CorruptSpec {
        noise_level: ds.noise.unwrap_or(0.0),
        dropout_fraction: ds.dropout_fraction.unwrap_or(0.05),
        dropout_scale: ds.dropout_scale.unwrap_or(0.1),
    };
    let mut noisy = corrupt_with(&clean, &spec, seed);
    if let Some(occ) = &ds.occlusion {
        let bands: Vec<_> = occ.bands.iter().map(|b| b.to_band()).collect();
        noisy = occlude(&noisy, &bands, occ.attenuation, seed)?;
    }
    ensure_out_dir(ctx)?;
    let clean_path = ctx.out.join("clean.flowfield");
    let noisy_path = ctx.out.join("noisy.flowfield");
    write_flowfield(&clean_path, &clean, Some(&womersley))?;
    write_flowfield(&noisy_path, &noisy, Some(&womersley))?;
    let mut manifest = Manifest::new("generate", &ctx.cfg.canonical(), seed);
    manifest.add_output(&ctx.out, &clean_path)?;
    manifest.add_output(&ctx.out, &noisy_path)?;
    if let Some(pi) = &ds.particle_images {
        let spec = RenderSpec {
            density: pi.density,
            blob_std: pi.blob_std,
            scale: pi.scale,
        };
        for k in 0..pi.pairs {
            let t = clean.period * k as f64 / pi.pairs.max(1) as f64;
            let (a, b) = render_particles_with(&clean, t, pi.dt, &spec, seed ^ (k as u64 + 1))?;
            let pa = ctx.out.join(format!("frame_{k:02}_a.pgm"));
            let pb = ctx.out.join(format!("frame_{k:02}_b.pgm"));
            write_pgm(&pa, &a)?;
            write_pgm(&pb, &b)?;
            manifest.add_output(&ctx.out, &pa)?;
            manifest.add_output(&ctx.out, &pb)?;
        }
    }
    manifest.write(&ctx.out.join("manifest.json"))?;
    println!(
        "generate: wrote {} and {} ({} samples)",
        clean_path.display(),
        noisy_path.display(),
        clean.len()
    );
    Ok(())
}
