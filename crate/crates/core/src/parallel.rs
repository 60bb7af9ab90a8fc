//! Chunked data-parallel loops over preallocated output buffers.
//!
//! Every task owns a disjoint chunk of the output, so results do not depend
//! on the number of threads. `threads == 1` runs on the calling thread
//! without touching rayon, which is the serial reference path.

use rayon::prelude::*;

/// Worker count used when the caller asks for `0` threads.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn resolve(threads: usize) -> usize {
    if threads == 0 {
        default_threads()
    } else {
        threads
    }
}

/// Runs `f(scratch, chunk_index, chunk)` over `chunk`-sized pieces of `out`.
/// Returns the error of the lowest failing chunk.
pub fn for_each_chunk<T, S, E, I, F>(threads: usize, out: &mut [T], chunk: usize, init: I, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) -> Result<(), E> + Sync + Send,
{
    if out.is_empty() {
        return Ok(());
    }
    let threads = resolve(threads);
    if threads == 1 {
        let mut s = init();
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(&mut s, i, c)?;
        }
        return Ok(());
    }
    let first_err = pool(threads).install(|| {
        out.par_chunks_mut(chunk)
            .enumerate()
            .map_init(&init, |s, (i, c)| f(s, i, c).err().map(|e| (i, e)))
            .flatten()
            .min_by_key(|(i, _)| *i)
    });
    first_err.map_or(Ok(()), |(_, e)| Err(e))
}

/// Like [`for_each_chunk`] over two buffers chunked in lockstep.
pub fn for_each_chunk2<A, B, S, E, I, F>(
    threads: usize,
    a: &mut [A],
    a_chunk: usize,
    b: &mut [B],
    b_chunk: usize,
    init: I,
    f: F,
) -> Result<(), E>
where
    A: Send,
    B: Send,
    E: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [A], &mut [B]) -> Result<(), E> + Sync + Send,
{
    if a.is_empty() || b.is_empty() {
        return Ok(());
    }
    let threads = resolve(threads);
    if threads == 1 {
        let mut s = init();
        for (i, (ca, cb)) in a.chunks_mut(a_chunk).zip(b.chunks_mut(b_chunk)).enumerate() {
            f(&mut s, i, ca, cb)?;
        }
        return Ok(());
    }
    let first_err = pool(threads).install(|| {
        a.par_chunks_mut(a_chunk)
            .zip(b.par_chunks_mut(b_chunk))
            .enumerate()
            .map_init(&init, |s, (i, (ca, cb))| f(s, i, ca, cb).err().map(|e| (i, e)))
            .flatten()
            .min_by_key(|(i, _)| *i)
    });
    first_err.map_or(Ok(()), |(_, e)| Err(e))
}

/// Maps `0..n` to a vector in parallel.
pub fn map_range<T, F>(threads: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let threads = resolve(threads);
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    pool(threads).install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_are_disjoint_and_ordered() {
        for threads in [1, 3] {
            let mut v = vec![0usize; 10];
            for_each_chunk(threads, &mut v, 3, || (), |_, i, c| {
                c.iter_mut().for_each(|x| *x = i);
                Ok::<(), ()>(())
            })
            .unwrap();
            assert_eq!(v, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
        }
    }

    #[test]
    fn lowest_error_wins() {
        let mut v = vec![0u8; 100];
        let err = for_each_chunk(4, &mut v, 1, || (), |_, i, _| if i % 7 == 3 { Err(i) } else { Ok(()) });
        assert_eq!(err, Err(3));
        let mut a = vec![0u8; 10];
        let mut b = vec![0u8; 5];
        let err = for_each_chunk2(2, &mut a, 2, &mut b, 1, || (), |_, i, _, _| if i >= 2 { Err(i) } else { Ok(()) });
        assert_eq!(err, Err(2));
        assert_eq!(map_range(2, 5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
