#![no_main]

use cstl::io::{read_results, write_aggregate, write_results};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_results(data, "fuzz") else {
        return;
    };
    let mut buf = Vec::new();
    write_results(&mut buf, &table).expect("writing to memory");
    let back = read_results(buf.as_slice(), "round trip").expect("written table parses");
    assert_eq!(back, table);
    write_aggregate(std::io::sink(), &table.aggregate()).expect("aggregate writes");
});
