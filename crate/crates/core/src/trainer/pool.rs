use rand::Rng;

use crate::data::Image2D;

/// History buffer of past generator outputs replayed to a discriminator.
#[derive(Debug, Clone, Default)]
pub struct ImagePool {
    capacity: usize,
    buffer: Vec<Image2D>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            buffer: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Returns the image a discriminator should see for this `fake`.
    ///
    /// While filling up, the fake is stored and returned. Once full, half of the
    /// time the fake is returned as is and otherwise it replaces a random stored
    /// image, which is returned instead.
    pub fn query(&mut self, fake: Image2D, rng: &mut impl Rng) -> Image2D {
        if self.capacity == 0 {
            return fake;
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fake.clone());
            return fake;
        }
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..self.buffer.len());
            std::mem::replace(&mut self.buffer[i], fake)
        } else {
            fake
        }
    }
}

pub fn pool_query(pool: &mut ImagePool, fake: Image2D, rng: &mut impl Rng) -> Image2D {
    pool.query(fake, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn img(v: f32) -> Image2D {
        Image2D::filled(2, 2, v)
    }

    #[test]
    fn zero_capacity_is_pass_through() {
        let mut pool = ImagePool::new(0);
        let mut rng = rng_for(0, &[]);
        for i in 0..10 {
            assert_eq!(pool_query(&mut pool, img(i as f32 / 10.0), &mut rng), img(i as f32 / 10.0));
        }
        assert!(pool.is_empty());
    }

    #[test]
    fn first_query_returns_input_and_stores_it() {
        let mut pool = ImagePool::new(50);
        let out = pool_query(&mut pool, img(0.3), &mut rng_for(0, &[]));
        assert_eq!(out, img(0.3));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn saturates_at_capacity_and_replays_history() {
        let mut pool = ImagePool::new(50);
        let mut rng = rng_for(1, &[]);
        let mut replayed = 0;
        for i in 0..1000 {
            let v = i as f32 / 1000.0;
            let out = pool_query(&mut pool, img(v), &mut rng);
            if out != img(v) {
                replayed += 1;
            }
            assert!(pool.len() <= 50);
        }
        assert_eq!(pool.len(), 50);
        // after filling, about half of the 950 queries swap in an old image
        assert!((400..=550).contains(&replayed), "{replayed}");
    }
}
