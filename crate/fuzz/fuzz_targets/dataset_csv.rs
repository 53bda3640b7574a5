#![no_main]

use cstl::io::{parse_dataset, write_dataset, ResponseColumn};
use cstl::model::Domain;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Either the first line names the response column or the last column is used.
    let named = data
        .split(|b| *b == b'\n')
        .next()
        .and_then(|h| std::str::from_utf8(h).ok())
        .and_then(|h| h.split(',').next())
        .map(|s| ResponseColumn::Named(s.trim().to_owned()));
    for response in [Some(ResponseColumn::Last), named].into_iter().flatten() {
        let Ok(ds) = parse_dataset(data, "fuzz", &response, Domain::Target) else {
            continue;
        };
        assert!(ds.design.iter().chain(ds.response.iter()).all(|v| v.is_finite()));
        assert_eq!(ds.design.nrows(), ds.response.len());

        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).expect("writing to memory");
        let back = parse_dataset(buf.as_slice(), "round trip", &ResponseColumn::Last, Domain::Target)
            .expect("written dataset parses");
        assert_eq!(back, ds);
    }
});
