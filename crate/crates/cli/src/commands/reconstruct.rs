//! `pulsefield reconstruct`: sample a checkpoint on a requested grid.

use pulsefield_core::field::linspace;
use pulsefield_core::io::{read_checkpoint, read_flowfield, write_flowfield, Checkpoint, Manifest};
use pulsefield_core::model::batch::{sample_field, sample_field_branched};

use super::{ensure_out_dir, CliError, Ctx};

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let io = ctx.cfg.io.clone().unwrap_or_default();
    let ckpt_path = io
        .checkpoint
        .unwrap_or_else(|| ctx.out.join("model.ckpt"));
    let ckpt = read_checkpoint(&ckpt_path)
        .map_err(|e| CliError::data(format!("{}: {e}", ckpt_path.display())))?;
    // reference (when present) supplies the default grid and the period
    let reference = io
        .reference
        .as_ref()
        .map(|p| read_flowfield(p))
        .transpose()?;
    let rc = ctx.cfg.reconstruct.clone().unwrap_or_default();
    let norm = match &ckpt {
        Checkpoint::Single(m) => m.norm,
        Checkpoint::Branched(b) => b.msff.norm,
    };
    let (times, xs, ys, period, params) = match &reference {
        Some((f, p)) => (
            match rc.nt {
                Some(nt) => linspace(f.times[0], *f.times.last().unwrap(), nt),
                None => f.times.clone(),
            },
            match rc.nx {
                Some(nx) => linspace(f.xs[0], *f.xs.last().unwrap(), nx),
                None => f.xs.clone(),
            },
            match rc.ny {
                Some(ny) => linspace(f.ys[0], *f.ys.last().unwrap(), ny),
                None => f.ys.clone(),
            },
            f.period,
            p.clone(),
        ),
        None => {
            // fall back to the training box recorded in the normalization map
            let nt = rc.nt.unwrap_or(49);
            let nx = rc.nx.unwrap_or(64);
            let ny = rc.ny.unwrap_or(33);
            (
                linspace(norm.lo[0], norm.hi[0], nt),
                linspace(norm.lo[1], norm.hi[1], nx),
                linspace(norm.lo[2], norm.hi[2], ny),
                norm.hi[0] - norm.lo[0],
                None,
            )
        }
    };
    let field = match &ckpt {
        Checkpoint::Single(m) => sample_field(m, &times, &xs, &ys, period),
        Checkpoint::Branched(b) => sample_field_branched(b, &times, &xs, &ys, period),
    };
    ensure_out_dir(ctx)?;
    let out_path = ctx.out.join("reconstruction.flowfield");
    write_flowfield(&out_path, &field, params.as_ref())?;
    let mut manifest = Manifest::new("reconstruct", &ctx.cfg.canonical(), ctx.cfg.seed());
    manifest.add_output(&ctx.out, &out_path)?;
    manifest.write(&ctx.out.join("manifest.json"))?;
    println!(
        "reconstruct: sampled {}x{}x{} grid to {}",
        times.len(),
        xs.len(),
        ys.len(),
        out_path.display()
    );
    Ok(())
}
