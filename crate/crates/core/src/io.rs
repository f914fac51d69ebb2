//! CSV persistence. Particle ids and jump indices are 1-based on disk.
//! Floats are written in shortest round-trip form, so reading back is exact.

use std::io::{Read, Write};

use crate::error::{invalid, Result};
use crate::meanfield::MarginalFlow;
use crate::metrics::EmpiricalMeasure;
use crate::particle_system::JumpEvent;
use crate::state::ParticleState;

fn axis_header(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (0..d).map(move |a| format!("{prefix}_{a}"))
}

/// `t, particle_id, r_0.., v_0..` rows for every snapshot.
pub fn write_trajectory_csv<W: Write>(w: W, states: &[ParticleState]) -> Result<()> {
    let d = states.first().map_or(1, |s| s.d);
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> =
        ["t".to_string(), "particle_id".to_string()].into_iter().chain(axis_header("r", d)).chain(axis_header("v", d)).collect();
    out.write_record(&header)?;
    for s in states {
        for k in 0..s.n {
            let mut row = vec![s.t.to_string(), (k + 1).to_string()];
            row.extend(s.r(k).iter().chain(s.v(k)).map(f64::to_string));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectory_csv`]; rows of one snapshot must be contiguous.
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<ParticleState>> {
    let mut rd = csv::Reader::from_reader(r);
    let cols = rd.headers()?.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(invalid("trajectory csv must have t, particle_id, r_*, v_* columns"));
    }
    let d = (cols - 2) / 2;
    let mut states = Vec::new();
    let mut cur: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for rec in rd.records() {
        let rec = rec?;
        let t: f64 = parse(&rec[0])?;
        let vals: Vec<f64> = (2..cols).map(|i| parse(&rec[i])).collect::<Result<_>>()?;
        let new_block = match &cur {
            Some((ct, _, _)) => *ct != t,
            None => true,
        };
        if new_block {
            if let Some((ct, p, v)) = cur.take() {
                states.push(ParticleState::new(ct, d, p, v)?);
            }
            cur = Some((t, Vec::new(), Vec::new()));
        }
        let (_, p, v) = cur.as_mut().expect("block started above");
        p.extend_from_slice(&vals[..d]);
        v.extend_from_slice(&vals[d..]);
    }
    if let Some((ct, p, v)) = cur {
        states.push(ParticleState::new(ct, d, p, v)?);
    }
    Ok(states)
}

/// `t, k, j, u_0.., accepted` rows.
pub fn write_jump_log_csv<W: Write>(w: W, d: usize, log: &[JumpEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = ["t", "k", "j"]
        .into_iter()
        .map(String::from)
        .chain(axis_header("u", d))
        .chain(std::iter::once("accepted".to_string()))
        .collect();
    out.write_record(&header)?;
    for e in log {
        let mut row = vec![e.t.to_string(), (e.k + 1).to_string(), (e.j + 1).to_string()];
        row.extend(e.u.iter().map(f64::to_string));
        row.push(u8::from(e.accepted).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format `t, sample_id, r_0.., v_0.., weight`.
pub fn write_flow_csv<W: Write>(w: W, flow: &MarginalFlow) -> Result<()> {
    let d = flow.dim();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = ["t".to_string(), "sample_id".to_string()]
        .into_iter()
        .chain(axis_header("r", d))
        .chain(axis_header("v", d))
        .chain(std::iter::once("weight".to_string()))
        .collect();
    out.write_record(&header)?;
    for (t, m) in flow.times.iter().zip(&flow.measures) {
        let pos = m.positions();
        for i in 0..m.len() {
            let mut row = vec![t.to_string(), (i + 1).to_string()];
            row.extend(pos[i * d..(i + 1) * d].iter().chain(m.velocity(i)).map(f64::to_string));
            row.push(m.weights()[i].to_string());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_flow_csv<R: Read>(r: R) -> Result<MarginalFlow> {
    let mut rd = csv::Reader::from_reader(r);
    let cols = rd.headers()?.len();
    if cols < 5 || (cols - 3) % 2 != 0 {
        return Err(invalid("flow csv must have t, sample_id, r_*, v_*, weight columns"));
    }
    let d = (cols - 3) / 2;
    let mut times = Vec::new();
    let mut blocks: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let t: f64 = parse(&rec[0])?;
        if times.last() != Some(&t) {
            times.push(t);
            blocks.push((Vec::new(), Vec::new(), Vec::new()));
        }
        let b = blocks.last_mut().expect("pushed above");
        for a in 0..d {
            b.0.push(parse(&rec[2 + a])?);
            b.1.push(parse(&rec[2 + d + a])?);
        }
        b.2.push(parse(&rec[cols - 1])?);
    }
    let measures = blocks
        .into_iter()
        .map(|(p, v, w)| EmpiricalMeasure::new(d, p, v, w))
        .collect::<Result<Vec<_>>>()?;
    MarginalFlow::new(times, measures)
}

/// `t, bound` rows.
pub fn write_envelope_csv<W: Write>(w: W, curve: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "bound"])?;
    for (t, b) in curve {
        out.write_record([t.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn parse(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {s:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let s0 = ParticleState::from_rows(0.0, &[vec![0.1, -2.0], vec![1.0 / 3.0, 4.0]], &[vec![1e-300, 5.5], vec![-0.7, 2.0]]).unwrap();
        let s1 = s0.transported(0.37);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[s0.clone(), s1.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,particle_id,r_0,r_1,v_0,v_1\n0,1,"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), vec![s0, s1]);
    }

    #[test]
    fn jump_log_is_one_based() {
        let e = JumpEvent { t: 0.5, k: 0, j: 2, u: vec![0.25], accepted: true, rate_ratio: 0.3 };
        let mut buf = Vec::new();
        write_jump_log_csv(&mut buf, 1, &[e]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,k,j,u_0,accepted\n0.5,1,3,0.25,1\n");
    }

    #[test]
    fn flow_roundtrip_is_exact() {
        let a = EmpiricalMeasure::new(1, vec![0.0, 1.5, -2.0], vec![0.1, 0.2, 0.3], vec![0.25, 0.5, 0.25]).unwrap();
        let b = EmpiricalMeasure::uniform(1, vec![3.0, 1.0, 2.0], vec![1.0, 1.0 / 7.0, 0.0]).unwrap();
        let flow = MarginalFlow::new(vec![0.0, 0.5], vec![a, b]).unwrap();
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, &flow).unwrap();
        assert_eq!(read_flow_csv(&buf[..]).unwrap(), flow);
    }

    #[test]
    fn envelope_csv() {
        let mut buf = Vec::new();
        write_envelope_csv(&mut buf, &[(0.0, 1.0), (0.5, 2.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,bound\n0,1\n0.5,2.5\n");
    }
}
