use nalgebra::DMatrix;

use crate::error::Result;

/// Fills a row-major `rows × cols` matrix, one closure call per row, in
/// parallel when the `parallel` feature is on. Row side results come back
/// in row order.
pub(crate) fn map_rows<T, F>(rows: usize, cols: usize, f: F) -> Result<(DMatrix<f64>, Vec<T>)>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> Result<T> + Sync + Send,
{
    if cols == 0 {
        #[cfg(feature = "parallel")]
        let side = {
            use rayon::prelude::*;
            (0..rows)
                .into_par_iter()
                .map(|i| f(i, &mut []))
                .collect::<Result<Vec<T>>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let side = (0..rows)
            .map(|i| f(i, &mut []))
            .collect::<Result<Vec<T>>>()?;
        return Ok((DMatrix::zeros(rows, 0), side));
    }
    let mut buf = vec![0.0; rows * cols];
    #[cfg(feature = "parallel")]
    let side: Vec<Result<T>> = {
        use rayon::prelude::*;
        buf.par_chunks_mut(cols)
            .enumerate()
            .map(|(i, row)| f(i, row))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let side: Vec<Result<T>> = buf
        .chunks_mut(cols)
        .enumerate()
        .map(|(i, row)| f(i, row))
        .collect();
    let side = side.into_iter().collect::<Result<Vec<T>>>()?;
    Ok((DMatrix::from_row_slice(rows, cols, &buf), side))
}

/// Sizes the global worker pool. Has no effect without the `parallel` feature.
pub fn configure_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| crate::error::Error::invalid("threads", e.to_string()))?;
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}
