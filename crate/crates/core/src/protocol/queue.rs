//! Receive-side task queue: strict in-order acceptance.
//!
//! A queue belongs to one task and consumes sequence numbers strictly in
//! order. A delivery whose seq is not exactly the next expected one is
//! rejected and must be re-sent; nothing is buffered out of order.

use super::{open_task, Direction, ProtocolError, SealingKey, TaskEnvelope};

#[derive(Debug)]
pub struct TaskQueue {
    pub queue_id: u64,
    pub task_id: u64,
    /// Next inbound seq this queue will accept.
    pub next_seq_in: u64,
    /// Next outbound seq this queue's owner will stamp on replies.
    pub next_seq_out: u64,
    inbound: Direction,
}

impl TaskQueue {
    pub fn new(queue_id: u64, task_id: u64, inbound: Direction) -> Self {
        Self {
            queue_id,
            task_id,
            next_seq_in: 0,
            next_seq_out: 0,
            inbound,
        }
    }

    /// Accepts one sealed envelope. On success the receive counter
    /// advances; on any failure it does not.
    pub fn accept(
        &mut self,
        envelope: &TaskEnvelope,
        key: &SealingKey,
    ) -> Result<Vec<u8>, ProtocolError> {
        if envelope.task_id != self.task_id {
            return Err(ProtocolError::AuthFailure);
        }
        let body = open_task(envelope, key, self.next_seq_in, self.inbound)?;
        self.next_seq_in += 1;
        Ok(body)
    }

    /// Claims the next outbound sequence number.
    pub fn next_out(&mut self) -> u64 {
        let seq = self.next_seq_out;
        self.next_seq_out += 1;
        seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{seal_task, TaskType};

    fn seal(key: &SealingKey, seq: u64, payload: u8) -> TaskEnvelope {
        seal_task(
            &[1, payload],
            key,
            9,
            seq,
            TaskType::Data,
            Direction::HostToController,
        )
        .unwrap()
    }

    #[test]
    fn in_order_acceptance() {
        let key = SealingKey([7; 32]);
        let mut queue = TaskQueue::new(1, 9, Direction::HostToController);
        for seq in 0..5 {
            queue.accept(&seal(&key, seq, seq as u8), &key).unwrap();
        }
        assert_eq!(queue.next_seq_in, 5);
    }

    #[test]
    fn reorder_rejected_then_resend_accepted() {
        let key = SealingKey([7; 32]);
        let mut queue = TaskQueue::new(1, 9, Direction::HostToController);
        let envs: Vec<_> = (0..3).map(|s| seal(&key, s, s as u8)).collect();

        queue.accept(&envs[0], &key).unwrap();
        // 2 before 1: rejected, counter frozen.
        assert!(matches!(
            queue.accept(&envs[2], &key),
            Err(ProtocolError::SequenceViolation { expected: 1, got: 2 })
        ));
        assert_eq!(queue.next_seq_in, 1);
        // 1 then the re-sent 2 go through.
        queue.accept(&envs[1], &key).unwrap();
        queue.accept(&envs[2], &key).unwrap();
        assert_eq!(queue.next_seq_in, 3);
    }

    #[test]
    fn replay_rejected() {
        let key = SealingKey([7; 32]);
        let mut queue = TaskQueue::new(1, 9, Direction::HostToController);
        let env = seal(&key, 0, 0);
        queue.accept(&env, &key).unwrap();
        assert!(matches!(
            queue.accept(&env, &key),
            Err(ProtocolError::SequenceViolation { .. })
        ));
    }

    #[test]
    fn wrong_task_id_rejected() {
        let key = SealingKey([7; 32]);
        let mut queue = TaskQueue::new(1, 8, Direction::HostToController);
        let env = seal(&key, 0, 0); // sealed for task 9
        assert_eq!(queue.accept(&env, &key), Err(ProtocolError::AuthFailure));
    }

    /// The bodies a queue accepts, in acceptance order, are exactly the
    /// sender's emission-order prefix — whatever adversarial delivery order
    /// is attempted.
    #[test]
    fn acceptance_order_is_emission_prefix() {
        let key = SealingKey([5; 32]);
        let sent: Vec<TaskEnvelope> = (0..6).map(|s| seal(&key, s, 10 + s as u8)).collect();

        // Adversarial delivery: shuffled, with duplicates, re-sending until drained.
        let mut queue = TaskQueue::new(1, 9, Direction::HostToController);
        let mut accepted = Vec::new();
        let order = [3usize, 0, 0, 2, 1, 5, 1, 2, 4, 3, 3, 4, 5, 5];
        for idx in order {
            if let Ok(body) = queue.accept(&sent[idx], &key) {
                accepted.push(body[1]);
            }
        }
        // Re-send anything still missing, in order.
        for env in &sent {
            if let Ok(body) = queue.accept(env, &key) {
                accepted.push(body[1]);
            }
        }
        assert_eq!(accepted, vec![10, 11, 12, 13, 14, 15]);
    }
}
