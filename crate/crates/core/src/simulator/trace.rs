//! Per-job trace output.

use std::io::Write;

use super::JobRecord;

pub const TRACE_HEADER: [&str; 6] = ["job_id", "arrival", "start_times", "completion", "latency", "cost"];

/// Replica start times joined by `;`, with `-` for replicas that never started.
pub fn format_starts(starts: &[Option<f64>]) -> String {
    starts
        .iter()
        .map(|s| match s {
            Some(t) => t.to_string(),
            None => "-".to_string(),
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_trace<W: Write>(out: W, records: &[JobRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.job_id.to_string(),
            r.arrival.to_string(),
            format_starts(&r.start_times),
            r.completion.to_string(),
            r.latency.to_string(),
            r.cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_rows() {
        let rec = JobRecord {
            job_id: 7,
            arrival: 1.5,
            start_times: vec![Some(2.0), None],
            servers: vec![0, 1],
            completion: 3.0,
            latency: 1.5,
            cost: 1.0,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "job_id,arrival,start_times,completion,latency,cost\n7,1.5,2;-,3,1.5,1\n"
        );
    }
}
