//! Decoded designators respect the triangle and region masks.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ubert::codec::{decode_relation, decode_table, Region, ScoreTable, TableRole};

const ROLES: [TableRole; 6] = [
    TableRole::Single,
    TableRole::HeadEntity,
    TableRole::TailEntity,
    TableRole::Coupling,
    TableRole::Trigger,
    TableRole::Argument,
];

fuzz_target!(|data: &[u8]| {
    let [size, start, role, rest @ ..] = data else { return };
    let size = usize::from(*size % 16) + 1;
    let region = if *start == 255 {
        Region::Cls
    } else {
        Region::TextBlock {
            start: usize::from(*start) % size,
        }
    };
    let cells: Vec<f64> = (0..size * size)
        .map(|i| f64::from(*rest.get(i).unwrap_or(&128) as i8) / 8.0)
        .collect();
    let role = ROLES[usize::from(*role) % ROLES.len()];
    let table = ScoreTable::from_cells(size, role, region, cells).unwrap();
    for d in decode_table(&table, 0.5) {
        assert!(d.row < size && d.col < size);
        assert!(role == TableRole::Coupling || d.row <= d.col);
        match region {
            Region::Cls => assert_eq!((d.row, d.col), (0, 0)),
            Region::TextBlock { start } => assert!(d.row >= start && d.col >= start),
        }
    }
    let _ = decode_relation(&table, &table, &table, 0.5);
});
