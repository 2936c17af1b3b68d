"""Event loop of the queue-network simulator (one replication).

Arrays only, so the loop compiles under numba.  Queues are single-server
FIFO; waiting vehicles are kept in per-queue linked lists.  The next event
is the earliest of the next external arrival and the earliest service
completion (linear scan over queues); equal times go to the event that was
scheduled first.
"""
import math

import numpy as np

from .._jit import njit

MM1, MD1, SINK = 0, 1, 2
POLICY, DISTRIBUTED = 0, 1


@njit(nogil=True)
def pick_successor(cands, ncand, occ, lane, cur_lane):
    """Array twin of :func:`flowsplit.baselines.distributed_rule`."""
    best = -1
    best_occ = 1 << 62
    for c in range(ncand):
        q = cands[c]
        if occ[q] < best_occ:
            best_occ = occ[q]
    # candidates are sorted by id, so the first tied one is the lowest id
    for c in range(ncand):
        q = cands[c]
        if occ[q] == best_occ:
            if best < 0:
                best = q
            if cur_lane >= 0 and lane[q] == cur_lane:
                return q
    return best


@njit(nogil=True)
def run_replication(arr_t, veh_flow, veh_path, hop_exp,
                    path_queues, path_len, mode,
                    flow_ingress, flow_egress, succ, succ_len, reach, lane,
                    svc_type, mu, horizon, warmup_t, window):
    """Simulate one replication; returns per-vehicle trip times and queue stats.

    Vehicles with entry time in ``[warmup_t, horizon)`` are measured;
    occupancy is integrated over ``[warmup_t, horizon]``.  After the
    horizon no vehicles enter and the system drains.
    """
    nveh = arr_t.shape[0]
    nq = mu.shape[0]
    max_hops = hop_exp.shape[1]

    trip = np.full(nveh, np.nan)
    hops_used = np.zeros(nveh, dtype=np.int64)
    occ_area = np.zeros(nq)
    visit_sum = np.zeros(nq)
    visit_cnt = np.zeros(nq, dtype=np.int64)

    n_in = np.zeros(nq, dtype=np.int64)          # vehicles at queue (incl. in service)
    snap = np.zeros(nq, dtype=np.int64)          # occupancy seen by the distributed rule
    head = np.full(nq, -1, dtype=np.int64)
    tail = np.full(nq, -1, dtype=np.int64)
    nxt = np.full(nveh, -1, dtype=np.int64)
    busy = np.full(nq, -1, dtype=np.int64)       # vehicle in service
    comp_t = np.full(nq, np.inf)
    comp_seq = np.zeros(nq, dtype=np.int64)
    cur_q = np.full(nveh, -1, dtype=np.int64)
    hop = np.zeros(nveh, dtype=np.int64)
    enter_q = np.zeros(nveh)

    seq = nveh  # external arrivals use their index as sequence number
    t = 0.0
    last_t = 0.0
    i_arr = 0
    arrived_h = 0
    completed_h = 0
    done_total = 0
    next_snap = 0.0
    cands = np.empty(nq, dtype=np.int64)

    while done_total < nveh:
        # next event
        q_ev = -1
        t_ev = np.inf
        s_ev = 1 << 62
        for q in range(nq):
            if comp_t[q] < t_ev or (comp_t[q] == t_ev and comp_seq[q] < s_ev):
                t_ev = comp_t[q]
                s_ev = comp_seq[q]
                q_ev = q
        is_arrival = False
        if i_arr < nveh:
            ta = arr_t[i_arr]
            if ta < t_ev or (ta == t_ev and i_arr < s_ev):
                is_arrival = True
                t_ev = ta
        if not np.isfinite(t_ev):
            break

        # occupancy integral over the measurement window
        a = max(last_t, warmup_t)
        b = min(t_ev, horizon)
        if b > a:
            for q in range(nq):
                occ_area[q] += n_in[q] * (b - a)
        last_t = t_ev
        t = t_ev
        if window > 0.0 and t >= next_snap:
            for q in range(nq):
                snap[q] = n_in[q]
            next_snap = (math.floor(t / window) + 1.0) * window

        if is_arrival:
            v = i_arr
            i_arr += 1
            if t < horizon:
                arrived_h += 1
            k = veh_flow[v]
            if mode == POLICY:
                target = path_queues[veh_path[v], 0]
            else:
                target = flow_ingress[k]
        else:
            q = q_ev
            v = busy[q]
            # departure from q
            n_in[q] -= 1
            if enter_q[v] >= warmup_t and enter_q[v] < horizon:
                visit_sum[q] += t - enter_q[v]
                visit_cnt[q] += 1
            # start next service at q
            w = head[q]
            if w >= 0:
                head[q] = nxt[w]
                if head[q] < 0:
                    tail[q] = -1
                busy[q] = w
                if svc_type[q] == MD1:
                    comp_t[q] = t + 1.0 / mu[q]
                else:
                    comp_t[q] = t + hop_exp[w, min(hop[w], max_hops - 1)] / mu[q]
                comp_seq[q] = seq
                seq += 1
            else:
                busy[q] = -1
                comp_t[q] = np.inf
            # route vehicle v onward
            k = veh_flow[v]
            hop[v] += 1
            target = -1
            if mode == POLICY:
                p = veh_path[v]
                if hop[v] < path_len[p]:
                    target = path_queues[p, hop[v]]
            elif q != flow_egress[k]:
                nc = 0
                for c in range(succ_len[q]):
                    s = succ[q, c]
                    if s == flow_egress[k] or reach[s, flow_egress[k]]:
                        cands[nc] = s
                        nc += 1
                occ = snap if window > 0.0 else n_in
                target = pick_successor(cands, nc, occ, lane, lane[q])

        # vehicle v enters target (or leaves the network)
        while True:
            if target < 0:
                trip_time = t - arr_t[v]
                if arr_t[v] >= warmup_t and arr_t[v] < horizon:
                    trip[v] = trip_time
                if t < horizon:
                    completed_h += 1
                hops_used[v] = hop[v]
                done_total += 1
                break
            if svc_type[target] == SINK:
                # zero-time sink: count the visit and exit
                hop[v] += 1
                target = -1
                continue
            cur_q[v] = target
            enter_q[v] = t
            n_in[target] += 1
            if busy[target] < 0:
                busy[target] = v
                if svc_type[target] == MD1:
                    comp_t[target] = t + 1.0 / mu[target]
                else:
                    comp_t[target] = t + hop_exp[v, min(hop[v], max_hops - 1)] / mu[target]
                comp_seq[target] = seq
                seq += 1
            else:
                if tail[target] >= 0:
                    nxt[tail[target]] = v
                else:
                    head[target] = v
                tail[target] = v
                nxt[v] = -1
            break

    counts = np.array([arrived_h, completed_h, arrived_h - completed_h, nveh - arrived_h])
    return trip, occ_area, visit_sum, visit_cnt, hops_used, counts
