//! Trace digests are sensitive to every field of every record.

use tagsoa_core::{trace_digest, PortId, ReactionId, Tag, TraceRecord};

fn trace() -> Vec<TraceRecord> {
    (0..10u32)
        .map(|i| TraceRecord {
            tag: Tag::new(u64::from(i) * 1_000_000, i % 3),
            reaction: ReactionId(i),
            deadline_handler: i % 4 == 0,
            writes: (0..=i % 3)
                .map(|w| {
                    (
                        PortId(w + i),
                        u64::from(i).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(w),
                    )
                })
                .collect(),
        })
        .collect()
}

/// Flips bit `bit` of field `field` in `r`; false if the field is too narrow.
fn flip(r: &mut TraceRecord, field: usize, bit: u32) -> bool {
    match field {
        0 => r.tag.time ^= 1 << (bit % 64),
        1 => r.tag.microstep ^= 1 << (bit % 32),
        2 => r.reaction.0 ^= 1 << (bit % 32),
        3 => r.deadline_handler = !r.deadline_handler,
        4 => r.writes[0].0 .0 ^= 1 << (bit % 32),
        5 => {
            let last = r.writes.len() - 1;
            r.writes[last].1 ^= 1 << (bit % 64)
        }
        _ => return false,
    }
    true
}

#[test]
fn single_bit_flips_change_the_digest() {
    let base = trace();
    let reference = trace_digest(&base);
    let mut flips = 0;
    for i in 0..1000u32 {
        let mut t = base.clone();
        let record = (i as usize) % t.len();
        let field = (i as usize / t.len()) % 6;
        assert!(flip(&mut t[record], field, i.wrapping_mul(7)));
        assert_ne!(
            trace_digest(&t),
            reference,
            "flip {i}: record {record} field {field}"
        );
        flips += 1;
    }
    assert_eq!(flips, 1000);
}

#[test]
fn order_and_membership_matter() {
    let base = trace();
    let reference = trace_digest(&base);
    let mut swapped = base.clone();
    swapped.swap(2, 3);
    assert_ne!(trace_digest(&swapped), reference);
    assert_ne!(trace_digest(&base[..9]), reference);
    let mut extra_write = base.clone();
    extra_write[0].writes.push((PortId(0), 0));
    assert_ne!(trace_digest(&extra_write), reference);
    assert_eq!(trace_digest(&trace()), reference);
}
