import datetime as dt

import pytest

from slatelab.store import FunnelStore


def make_event(visitor="v1", course=1, date="2024-01-01", context="featured",
               **measures):
    event = {
        "visitor_id": visitor,
        "course_id": course,
        "date": date,
        "page_context": context,
    }
    event.update(measures)
    return event


@pytest.fixture
def store():
    return FunnelStore()


@pytest.fixture
def day():
    def _day(offset, start=dt.date(2024, 1, 1)):
        return start + dt.timedelta(days=offset)

    return _day
