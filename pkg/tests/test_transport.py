import pytest

from lfq.config import TcpParams
from lfq.transport import BicState, Cca, Phase, Receiver, SenderState, bic_increment


def make_sender(cca: Cca, cwnd: float = 10.0, phase: Phase = Phase.SLOW_START) -> SenderState:
    sender = SenderState.create(cca, TcpParams(), base_rtt=10_000.0)
    sender.cwnd = cwnd
    sender.phase = phase
    return sender


def test_initial_window_is_sent_at_start():
    sender = SenderState.create(Cca.NEW_RENO, TcpParams(), base_rtt=10_000.0)
    assert sender.start() == list(range(1, 11))
    assert sender.outstanding == 10
    assert sender.ssthresh == float("inf")


def test_slow_start_adds_one_per_ack():
    sender = make_sender(Cca.NEW_RENO)
    sender.start()
    sends = sender.on_ack(1, now=10_000)
    assert sender.cwnd == 11.0
    # window grew by one and one packet left the network
    assert sends == [11, 12]


def test_reno_congestion_avoidance_grows_by_about_one_per_window():
    sender = make_sender(Cca.NEW_RENO, phase=Phase.CONGESTION_AVOIDANCE)
    sender.start()
    for seq in range(1, 11):
        sender.on_ack(seq, now=seq)
    assert sender.cwnd == pytest.approx(11.0, abs=0.1)


@pytest.mark.parametrize("cca, expected", [(Cca.NEW_RENO, 20.0), (Cca.BIC, 28.0)])
def test_multiplicative_decrease(cca, expected):
    sender = make_sender(cca, cwnd=40.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.on_loss_detected()
    assert sender.cwnd == pytest.approx(expected)
    assert sender.phase == Phase.FAST_RECOVERY
    assert sender.loss_events == 1


def test_bic_loss_records_window_bounds():
    sender = make_sender(Cca.BIC, cwnd=40.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.on_loss_detected()
    assert sender.bic.w_max == 40.0
    assert sender.bic.w_min == pytest.approx(28.0)
    assert sender.ssthresh == pytest.approx(28.0)


def test_decrease_is_clamped_at_one():
    for cca in (Cca.NEW_RENO, Cca.BIC):
        sender = make_sender(cca, cwnd=1.6, phase=Phase.CONGESTION_AVOIDANCE)
        sender.on_loss_detected()
        assert sender.cwnd >= 1.0


def test_bic_binary_search_increment():
    assert bic_increment(28.0, BicState(w_max=40.0, w_min=28.0)) == 6.0


def test_bic_increment_capped_at_s_max():
    assert bic_increment(100.0, BicState(w_max=500.0, w_min=100.0)) == 32.0


def test_bic_max_probing_starts_slow_above_w_max():
    bic = BicState(w_max=40.0)
    assert bic_increment(40.0, bic) == pytest.approx(0.01)
    assert bic_increment(45.0, bic) == 5.0
    assert bic_increment(200.0, bic) == 32.0


def test_bic_round_moves_to_midpoint_after_one_rtt():
    sender = make_sender(Cca.BIC, cwnd=28.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.bic.w_max = 40.0
    sender.bic.w_min = 28.0
    sender.start()
    assert sender.outstanding == 28
    for seq in range(1, 29):
        sender.on_ack(seq, now=seq)
    assert sender.cwnd == pytest.approx(34.0)


def test_triple_duplicate_ack_triggers_fast_retransmit():
    sender = make_sender(Cca.NEW_RENO, cwnd=10.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.start()
    sender.on_ack(1, now=1)
    assert sender.on_ack(1, now=2) == []
    assert sender.on_ack(1, now=3) == []
    sends = sender.on_ack(1, now=4)
    assert sends[0] == 2
    assert sender.phase == Phase.FAST_RECOVERY
    assert sender.retransmits == 1


def test_fast_recovery_exit_restores_exact_decreased_window():
    sender = make_sender(Cca.NEW_RENO, cwnd=10.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.start()
    sender.on_ack(1, now=1)
    cwnd_before = sender.cwnd
    for now in (2, 3, 4, 5, 6):
        sender.on_ack(1, now=now)
    assert sender.inflation > 0
    sender.on_ack(sender.recover, now=7)
    assert sender.phase == Phase.CONGESTION_AVOIDANCE
    assert sender.cwnd == pytest.approx(cwnd_before * 0.5)
    assert sender.inflation == 0.0


def test_partial_ack_retransmits_next_hole():
    sender = make_sender(Cca.NEW_RENO, cwnd=10.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.start()
    for now in (1, 2, 3):
        sender.on_ack(0, now=now)
    assert sender.phase == Phase.FAST_RECOVERY
    sends = sender.on_ack(3, now=4)
    assert sends[0] == 4
    assert sender.phase == Phase.FAST_RECOVERY


def test_guard_retransmits_after_stall():
    sender = make_sender(Cca.NEW_RENO)
    sender.start()
    assert sender.on_guard(now=int(sender.guard_interval) - 1) == []
    assert sender.on_guard(now=int(sender.guard_interval)) == [1]


def test_smoothed_rtt_uses_echo_samples():
    sender = make_sender(Cca.NEW_RENO)
    sender.start()
    sender.on_ack(1, now=10_000, echo_sent_at=0)
    assert sender.srtt == 10_000.0
    sender.on_ack(2, now=28_000, echo_sent_at=10_000)
    assert sender.srtt == pytest.approx(10_000.0 + (18_000.0 - 10_000.0) / 8)


def test_in_flight_never_exceeds_window():
    sender = make_sender(Cca.NEW_RENO, cwnd=10.0, phase=Phase.CONGESTION_AVOIDANCE)
    sender.start()
    for seq in range(1, 50):
        sender.on_ack(seq, now=seq)
        assert 0 <= sender.in_flight <= sender.cwnd + 1


def test_receiver_in_order():
    receiver = Receiver()
    assert [receiver.on_packet(seq) for seq in (1, 2, 3)] == [1, 2, 3]


def test_receiver_gap_sends_duplicates():
    receiver = Receiver()
    assert [receiver.on_packet(seq) for seq in (1, 3, 4, 5)] == [1, 1, 1, 1]
    assert receiver.on_packet(2) == 5
    assert receiver.bytes_received == 5 * 1500
