//! Persists a branch as an append-only event log, damages the tail as an
//! interrupted run would, and resumes from what survived.

use std::io::Write;

use twolayer_waves::continuation::{extend_branch_with, start_events, StopReason};
use twolayer_waves::io::{read_branch, BranchHeader, BranchWriter};
use twolayer_waves::{Branch, ContinuationPolicy, PhysParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PhysParams::new(2.0, 0.5, 0.3)?;
    let policy = ContinuationPolicy { target_amplitude: Some(0.2), ..Default::default() };
    let path = std::env::temp_dir().join(format!("branch_log_{}.jsonl", std::process::id()));

    let header = BranchHeader::new(&params, &policy);
    let events = start_events(&params, &policy)?;
    let mut writer = BranchWriter::create(&path, &header, &events)?;
    let mut branch = Branch::replay(&params, &policy, &events)?;
    let mut seen = 0;
    // Stop after a few points to play the part of an interrupted run.
    let _ = extend_branch_with(&mut branch, |ev| {
        writer.append(ev)?;
        seen += 1;
        if seen == 4 {
            return Err(twolayer_waves::Error::Format("interrupted".into()));
        }
        Ok(())
    });
    drop(writer);
    std::fs::OpenOptions::new().append(true).open(&path)?.write_all(b"{\"Point\": {\"point\"")?;

    let log = read_branch(&path)?;
    println!("recovered {} events, damaged tail: {}", log.events.len(), log.truncated);
    let mut resumed = log.branch()?;
    println!("resuming at A = {:.4} with {} points", resumed.last().diagnostics.amplitude, resumed.points.len());
    let mut writer = BranchWriter::create(&path, &log.header, &log.events)?;
    let stop = extend_branch_with(&mut resumed, |ev| writer.append(ev))?;
    assert_eq!(stop, StopReason::TargetReached);
    println!("finished at A = {:.4} with {} points", resumed.last().diagnostics.amplitude, resumed.points.len());

    let reread = read_branch(&path)?.branch()?;
    println!("log replays to the same branch: {}", reread.points == resumed.points);
    std::fs::remove_file(&path)?;
    Ok(())
}
