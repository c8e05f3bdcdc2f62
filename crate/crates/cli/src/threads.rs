//! Minimal order-preserving parallel map over a bounded worker count.
//! Workers take contiguous chunks; results land in their input slots, so
//! the output is identical to the sequential run for pure functions.

pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut results: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (ci, (in_chunk, out_chunk)) in
            items.chunks(chunk).zip(results.chunks_mut(chunk)).enumerate()
        {
            let f = &f;
            s.spawn(move || {
                for (k, item) in in_chunk.iter().enumerate() {
                    out_chunk[k] = Some(f(ci * chunk + k, item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("worker filled its slot")).collect()
}
